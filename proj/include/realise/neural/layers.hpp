// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "realise/neural/ops.hpp"

namespace realise::nn {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;  // weight decay applies to matrices, not biases or norm gains
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

using Rng = std::mt19937_64;

/// Per-call forward state: dropout is active only when training.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

/// Truncated normal N(0, std^2) restricted to two standard deviations.
template <typename T>
Tensor<T> truncated_normal(Shape shape, double std, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> v(numel(shape));
  for (auto& x : v) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    x = static_cast<T>(z * std);
  }
  return Tensor<T>(std::move(shape), std::move(v), true);
}

/// He-normal initialization for ReLU convolutions.
template <typename T>
Tensor<T> kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> zeros_param(Shape shape) {
  return Tensor<T>::zeros(std::move(shape), true);
}

template <typename T>
Tensor<T> ones_param(Shape shape) {
  return Tensor<T>::full(std::move(shape), T{1}, true);
}

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, T rate, const ForwardContext& ctx) {
  if (!ctx.training || rate <= T{0} || ctx.rng == nullptr) return x;
  return dropout(x, rate, *ctx.rng);
}

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, double std = 0.02)
      : weight_(truncated_normal<T>({in, out}, std, rng)), bias_(zeros_param<T>({out})) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight_, bias_); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight_, true});
    out.push_back({prefix + ".bias", bias_, false});
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim) : gain_(ones_param<T>({dim})), bias_(zeros_param<T>({dim})) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain_, bias_); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".gain", gain_, false});
    out.push_back({prefix + ".bias", bias_, false});
  }

  Tensor<T>& gain() { return gain_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> gain_;
  Tensor<T> bias_;
};

struct TransformerSpec {
  std::size_t dim = 64;
  std::size_t heads = 2;
  std::size_t ffn = 256;
  double dropout = 0.1;
};

/// Post-norm encoder layer: x = LN(x + Attn(x)); x = LN(x + FFN(x)).
template <typename T>
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(const TransformerSpec& spec, Rng& rng)
      : spec_(spec),
        qkv_(spec.dim, 3 * spec.dim, rng),
        proj_(spec.dim, spec.dim, rng),
        norm1_(spec.dim),
        ffn_in_(spec.dim, spec.ffn, rng),
        ffn_out_(spec.ffn, spec.dim, rng),
        norm2_(spec.dim) {
    if (spec.heads == 0 || spec.dim % spec.heads != 0) {
      throw ShapeError("transformer: dim " + std::to_string(spec.dim) + " not divisible by heads " +
                       std::to_string(spec.heads));
    }
  }

  Tensor<T> operator()(const Tensor<T>& x, std::span<const std::uint8_t> mask, std::size_t batch,
                       std::size_t len, const ForwardContext& ctx) const {
    if (x.cols() != spec_.dim || x.rows() != batch * len) {
      throw ShapeError("transformer: input " + shape_str(x.shape()) + " does not match " +
                       std::to_string(batch * len) + "x" + std::to_string(spec_.dim));
    }
    const T rate = static_cast<T>(spec_.dropout);
    auto ctx_vec = attention(qkv_(x), mask, batch, len, spec_.heads);
    auto attn = maybe_dropout(proj_(ctx_vec), rate, ctx);
    auto h = norm1_(add(x, attn));
    auto ff = maybe_dropout(ffn_out_(gelu(ffn_in_(h))), rate, ctx);
    return norm2_(add(h, ff));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    qkv_.collect(prefix + ".attn.qkv", out);
    proj_.collect(prefix + ".attn.out", out);
    norm1_.collect(prefix + ".attn_norm", out);
    ffn_in_.collect(prefix + ".ffn.in", out);
    ffn_out_.collect(prefix + ".ffn.out", out);
    norm2_.collect(prefix + ".ffn_norm", out);
  }

  const TransformerSpec& spec() const { return spec_; }

 private:
  TransformerSpec spec_;
  Linear<T> qkv_;
  Linear<T> proj_;
  LayerNorm<T> norm1_;
  Linear<T> ffn_in_;
  Linear<T> ffn_out_;
  LayerNorm<T> norm2_;
};

template <typename T>
struct GruResult {
  std::vector<Tensor<T>> states;  // hidden after each step, [batch x hidden]
  Tensor<T> last;
};

/// Single-layer GRU cell with gate order (reset, update, candidate):
///   r = s(x Wr + br + h Ur + cr), z = s(x Wz + bz + h Uz + cz)
///   n = tanh(x Wn + bn + r * (h Un + cn)),  h' = (1 - z) * n + z * h
template <typename T>
class GruCell {
 public:
  GruCell() = default;
  GruCell(std::size_t input, std::size_t hidden, Rng& rng, double std = 0.02)
      : input_(input),
        hidden_(hidden),
        w_ih_(truncated_normal<T>({input, 3 * hidden}, std, rng)),
        w_hh_(truncated_normal<T>({hidden, 3 * hidden}, std, rng)),
        b_ih_(zeros_param<T>({3 * hidden})),
        b_hh_(zeros_param<T>({3 * hidden})) {}

  std::size_t hidden() const { return hidden_; }
  std::size_t input() const { return input_; }

  /// One recurrence step for a [batch x input] input and [batch x hidden] state.
  Tensor<T> step(const Tensor<T>& x, const Tensor<T>& h) const {
    return step_projected(linear(x, w_ih_, b_ih_), h);
  }

  /// Runs packed sequences. `inputs` is time-major [steps*batch x input];
  /// sequence b advances only while t < lengths[b] and keeps its state after.
  GruResult<T> run(const Tensor<T>& inputs, std::span<const std::size_t> lengths,
                   const Tensor<T>& h0) const {
    const std::size_t batch = lengths.size();
    if (h0.rows() != batch || h0.cols() != hidden_ || inputs.cols() != input_ ||
        (batch > 0 && inputs.rows() % batch != 0)) {
      throw ShapeError("gru: inputs " + shape_str(inputs.shape()) + " / state " + shape_str(h0.shape()) +
                       " inconsistent with batch " + std::to_string(batch));
    }
    const std::size_t steps = batch ? inputs.rows() / batch : 0;
    GruResult<T> result;
    result.last = h0;
    if (steps == 0) return result;
    auto projected = linear(inputs, w_ih_, b_ih_);
    Tensor<T> h = h0;
    for (std::size_t t = 0; t < steps; ++t) {
      auto next = step_projected(slice_rows(projected, t * batch, batch), h);
      bool all_active = true;
      std::vector<T> active(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        active[b] = t < lengths[b] ? T{1} : T{0};
        all_active = all_active && active[b] == T{1};
      }
      if (!all_active) {
        Tensor<T> keep({batch, 1}, std::move(active));
        next = add(h, mul_colvec(sub(next, h), keep));
      }
      h = next;
      result.states.push_back(h);
    }
    result.last = h;
    return result;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".w_ih", w_ih_, true});
    out.push_back({prefix + ".w_hh", w_hh_, true});
    out.push_back({prefix + ".b_ih", b_ih_, false});
    out.push_back({prefix + ".b_hh", b_hh_, false});
  }

 private:
  Tensor<T> step_projected(const Tensor<T>& gi, const Tensor<T>& h) const {
    auto gh = linear(h, w_hh_, b_hh_);
    const std::size_t n = hidden_;
    auto r = sigmoid(add(slice_cols(gi, 0, n), slice_cols(gh, 0, n)));
    auto z = sigmoid(add(slice_cols(gi, n, n), slice_cols(gh, n, n)));
    auto cand = tanh(add(slice_cols(gi, 2 * n, n), mul(r, slice_cols(gh, 2 * n, n))));
    return add(cand, mul(z, sub(h, cand)));
  }

  std::size_t input_ = 0;
  std::size_t hidden_ = 0;
  Tensor<T> w_ih_;
  Tensor<T> w_hh_;
  Tensor<T> b_ih_;
  Tensor<T> b_hh_;
};

/// Downsampling residual block: out = relu(conv3x3(relu(conv3x3_s2(x))) + conv1x1_s2(x)).
/// Spatial size halves; channels go from `in` to `out`.
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(std::size_t in, std::size_t out, Rng& rng)
      : in_(in),
        out_(out),
        conv1_(kaiming_normal<T>({out, in, 3, 3}, in * 9, rng)),
        bias1_(zeros_param<T>({out})),
        conv2_(kaiming_normal<T>({out, out, 3, 3}, out * 9, rng)),
        bias2_(zeros_param<T>({out})),
        shortcut_(kaiming_normal<T>({out, in, 1, 1}, in, rng)),
        shortcut_bias_(zeros_param<T>({out})) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.ndim() != 4 || x.dim(1) != in_ || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
      throw ShapeError("resblock: expected [n x " + std::to_string(in_) +
                       " x even x even], got " + shape_str(x.shape()));
    }
    auto main = relu(conv2d(x, conv1_, bias1_, {2, 1}));
    main = conv2d(main, conv2_, bias2_, {1, 1});
    auto skip = conv2d(x, shortcut_, shortcut_bias_, {2, 0});
    return relu(add(main, skip));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".conv1.weight", conv1_, true});
    out.push_back({prefix + ".conv1.bias", bias1_, false});
    out.push_back({prefix + ".conv2.weight", conv2_, true});
    out.push_back({prefix + ".conv2.bias", bias2_, false});
    out.push_back({prefix + ".shortcut.weight", shortcut_, true});
    out.push_back({prefix + ".shortcut.bias", shortcut_bias_, false});
  }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  Tensor<T> conv1_;
  Tensor<T> bias1_;
  Tensor<T> conv2_;
  Tensor<T> bias2_;
  Tensor<T> shortcut_;
  Tensor<T> shortcut_bias_;
};

}  // namespace realise::nn
