// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "realise/model.hpp"
#include "realise/toy.hpp"

// Gradient checks shared by the unit tests and the acceptance runner. Each
// case builds a random small configuration from a seed and returns the worst
// per-tensor relative error.
namespace realise::oracle {

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kSmoothEps = 1e-3;
// Piecewise-linear networks are checked with a smaller step so that no
// perturbation crosses a ReLU kink.
inline constexpr double kKinkEps = 1e-6;
inline constexpr int kConfigsPerLayer = 5;

struct GradCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline std::vector<std::uint8_t> random_mask(std::mt19937_64& rng, std::size_t batch, std::size_t len) {
  std::vector<std::uint8_t> mask(batch * len, 1);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t keep = pick(rng, 1, len);
    for (std::size_t t = keep; t < len; ++t) mask[b * len + t] = 0;
  }
  return mask;
}

/// A tiny vocabulary with pinyin and glyphs for whole-model checks.
inline const ToyWorld& tiny_world() {
  static const ToyWorld w = [] {
    ToyWorldConfig c;
    c.classes = 4;
    c.fillers = 2;
    c.function_chars = 10;
    c.cues_per_class = 1;
    c.templates = 3;
    c.min_len = 3;
    c.max_len = 4;
    c.slots = 1;
    c.train_size = 8;
    c.test_size = 2;
    c.rate = 0.3;
    return build_toy_world(c);
  }();
  return w;
}

inline ModelConfig tiny_model_config(std::size_t vocab_size) {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.hidden = 8;
  m.heads = 2;
  m.ffn = 12;
  m.semantic_layers = 1;
  m.phonetic_layers = 1;
  m.fusion_layers = 1;
  m.pinyin_embed = 4;
  m.max_len = 8;
  m.dropout = 0.0;
  return m;
}

inline std::vector<GradCase> gradient_cases() {
  using nn::Tensor;
  std::vector<GradCase> cases;

  cases.push_back({"linear", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t m = pick(rng, 1, 4), in = pick(rng, 1, 5), out = pick(rng, 1, 5);
    auto x = random_tensor({m, in}, rng);
    auto w = random_tensor({in, out}, rng);
    auto b = random_tensor({out}, rng);
    return grad_check([&] { return project(nn::linear(x, w, b), seed); }, {{"x", x}, {"w", w}, {"b", b}},
                      kSmoothEps);
  }});

  cases.push_back({"layernorm", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t m = pick(rng, 1, 4), n = pick(rng, 2, 6);
    auto x = random_tensor({m, n}, rng);
    auto g = random_tensor({n}, rng);
    auto b = random_tensor({n}, rng);
    return grad_check([&] { return project(nn::layer_norm(x, g, b), seed); }, {{"x", x}, {"gain", g}, {"bias", b}},
                      kSmoothEps);
  }});

  cases.push_back({"attention", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t batch = pick(rng, 1, 2), len = pick(rng, 2, 4), heads = pick(rng, 1, 2);
    const std::size_t d = heads * pick(rng, 1, 3);
    auto qkv = random_tensor({batch * len, 3 * d}, rng);
    const auto mask = random_mask(rng, batch, len);
    return grad_check([&] { return project(nn::attention(qkv, mask, batch, len, heads), seed); }, {{"qkv", qkv}},
                      kSmoothEps);
  }});

  cases.push_back({"transformer_layer", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t batch = pick(rng, 1, 2), len = pick(rng, 2, 4), heads = pick(rng, 1, 2);
    const std::size_t d = heads * pick(rng, 2, 3);
    nn::Rng init(seed);
    nn::TransformerLayer<double> layer({d, heads, pick(rng, 4, 8), 0.0}, init);
    nn::ParamList<double> params;
    layer.collect("layer", params);
    for (auto& p : params) {  // larger weights than the default 0.02 so every path matters
      for (auto& v : p.tensor.data()) v = v * 20.0 + (p.name.find("norm") != std::string::npos ? 0.0 : 0.05);
    }
    auto x = random_tensor({batch * len, d}, rng);
    const auto mask = random_mask(rng, batch, len);
    auto named = as_named(params);
    named.emplace_back("x", x);
    return grad_check([&] { return project(layer(x, mask, batch, len, {}), seed); }, named, kSmoothEps);
  }});

  cases.push_back({"gru", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t batch = pick(rng, 1, 3), in = pick(rng, 1, 4), hidden = pick(rng, 1, 4),
                      steps = pick(rng, 1, 4);
    nn::Rng init(seed);
    nn::GruCell<double> cell(in, hidden, init, 0.5);
    nn::ParamList<double> params;
    cell.collect("gru", params);
    for (auto& p : params)
      if (p.name.find(".b_") != std::string::npos)
        for (auto& v : p.tensor.data()) v = std::normal_distribution<double>(0.0, 0.5)(rng);
    auto x = random_tensor({steps * batch, in}, rng);
    auto h0 = random_tensor({batch, hidden}, rng, 0.5);
    std::vector<std::size_t> lengths(batch);
    for (auto& l : lengths) l = pick(rng, 1, steps);
    auto named = as_named(params);
    named.emplace_back("x", x);
    named.emplace_back("h0", h0);
    return grad_check([&] { return project(cell.run(x, lengths, h0).last, seed); }, named, kSmoothEps);
  }});

  cases.push_back({"resblock", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = pick(rng, 1, 2), in = pick(rng, 1, 3), out = pick(rng, 1, 4), hw = 2 * pick(rng, 1, 3);
    nn::Rng init(seed);
    nn::ResBlock<double> block(in, out, init);
    nn::ParamList<double> params;
    block.collect("block", params);
    for (auto& p : params)
      if (p.name.find("bias") != std::string::npos)
        for (auto& v : p.tensor.data()) v = std::normal_distribution<double>(0.0, 0.3)(rng);
    auto x = random_tensor({n, in, hw, hw}, rng);
    auto named = as_named(params);
    named.emplace_back("x", x);
    return grad_check([&] { return project(block(x), seed); }, named, kKinkEps);
  }});

  cases.push_back({"fusion_gate", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t batch = pick(rng, 1, 2), len = pick(rng, 2, 4);
    auto cfg = tiny_model_config(tiny_world().vocab.size());
    Realise<double> model(cfg, seed);
    for (auto& v : model.gate().weight().data()) v *= 20.0;
    const std::size_t d = cfg.hidden;
    auto ht = random_tensor({batch * len, d}, rng);
    auto ha = random_tensor({batch * len, d}, rng);
    auto hv = random_tensor({batch * len, d}, rng);
    const auto mask = random_mask(rng, batch, len);
    return grad_check([&] { return project(model.fuse(ht, ha, hv, mask, batch, len).mixed, seed); },
                      {{"gate.weight", model.gate().weight()}, {"gate.bias", model.gate().bias()},
                       {"ht", ht}, {"ha", ha}, {"hv", hv}},
                      kSmoothEps);
  }});

  cases.push_back({"full_model_loss", [](std::uint64_t seed) {
    const auto& w = tiny_world();
    auto cfg = tiny_model_config(w.vocab.size());
    Realise<double> model(cfg, seed);
    std::mt19937_64 rng(seed);
    // Zero conv biases put blank glyph regions exactly on the ReLU kink.
    // Conv weights keep their Kaiming scale; scaled up they swamp the
    // graphic LayerNorm and bias gradients sink below difference noise.
    for (auto& p : model.parameters()) {
      if (p.decay && p.name.rfind("graphic.", 0) != 0)
        for (auto& v : p.tensor.data()) v *= 10.0;
      else if (p.name.find("bias") != std::string::npos)
        for (auto& v : p.tensor.data()) v = std::normal_distribution<double>(0.0, 0.3)(rng);
    }
    InputBuilder builder(w.vocab, w.pinyin, w.atlas);
    const Batch b = make_batch(w.train, w.vocab, cfg.max_len);
    const auto in = builder.build<double>(b);
    const auto tgt = trimmed_targets(b, in.len);
    return grad_check([&] { return nn::cross_entropy(model.forward(in, {}).logits, tgt.ids, tgt.active); },
                      as_named(model.parameters()), kKinkEps, 6, seed);
  }});

  return cases;
}

}  // namespace realise::oracle
