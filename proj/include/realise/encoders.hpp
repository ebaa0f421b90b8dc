// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "realise/glyph.hpp"
#include "realise/neural/layers.hpp"
#include "realise/pinyin.hpp"

namespace realise {

using nn::ForwardContext;
using nn::ParamList;
using nn::Rng;
using nn::Tensor;

struct EncoderDims {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;
  std::size_t heads = 2;
  std::size_t ffn = 256;
  std::size_t max_len = 32;
  double dropout = 0.1;
};

/// Position ids 0..len-1 repeated for every row of a [batch x len] grid.
inline std::vector<int> position_ids(std::size_t batch, std::size_t len) {
  std::vector<int> out(batch * len);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(i % len);
  return out;
}

/// Token + learned position embeddings, LayerNorm, then transformer layers.
/// The token table doubles as the output projection of the fusion head.
template <typename T>
class SemanticEncoder {
 public:
  SemanticEncoder() = default;
  SemanticEncoder(const EncoderDims& dims, std::size_t layers, Rng& rng) : dims_(dims) {
    token_ = nn::truncated_normal<T>({dims.vocab_size, dims.hidden}, 0.02, rng);
    position_ = nn::truncated_normal<T>({dims.max_len, dims.hidden}, 0.02, rng);
    norm_ = nn::LayerNorm<T>(dims.hidden);
    for (std::size_t l = 0; l < layers; ++l) {
      layers_.emplace_back(nn::TransformerSpec{dims.hidden, dims.heads, dims.ffn, dims.dropout}, rng);
    }
  }

  Tensor<T> operator()(std::span<const int> ids, std::span<const std::uint8_t> mask, std::size_t batch,
                       std::size_t len, const ForwardContext& ctx) const {
    check_len(len);
    const auto pos = position_ids(batch, len);
    auto x = norm_(nn::add(nn::gather_rows(token_, ids), nn::gather_rows(position_, std::span<const int>(pos))));
    x = nn::maybe_dropout(x, static_cast<T>(dims_.dropout), ctx);
    for (const auto& layer : layers_) x = layer(x, mask, batch, len, ctx);
    return x;
  }

  const Tensor<T>& token_embedding() const { return token_; }
  Tensor<T>& token_embedding() { return token_; }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".token_embedding", token_, true});
    out.push_back({prefix + ".position_embedding", position_, true});
    norm_.collect(prefix + ".embedding_norm", out);
    for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect(prefix + ".layer" + std::to_string(l), out);
  }

 private:
  void check_len(std::size_t len) const {
    if (len > dims_.max_len) {
      throw nn::ShapeError("sequence length " + std::to_string(len) + " exceeds max_len " + std::to_string(dims_.max_len));
    }
  }

  EncoderDims dims_;
  Tensor<T> token_;
  Tensor<T> position_;
  nn::LayerNorm<T> norm_;
  std::vector<nn::TransformerLayer<T>> layers_;
};

/// Character level: GRU over pinyin symbols, last hidden state per character.
/// Sentence level: add positions, LayerNorm, transformer layers.
template <typename T>
class PhoneticEncoder {
 public:
  PhoneticEncoder() = default;
  PhoneticEncoder(const EncoderDims& dims, std::size_t layers, std::size_t symbol_dim, Rng& rng) : dims_(dims) {
    symbols_ = nn::truncated_normal<T>({static_cast<std::size_t>(PinyinAlphabet::size()), symbol_dim}, 0.02, rng);
    gru_ = nn::GruCell<T>(symbol_dim, dims.hidden, rng);
    position_ = nn::truncated_normal<T>({dims.max_len, dims.hidden}, 0.02, rng);
    norm_ = nn::LayerNorm<T>(dims.hidden);
    for (std::size_t l = 0; l < layers; ++l) {
      layers_.emplace_back(nn::TransformerSpec{dims.hidden, dims.heads, dims.ffn, dims.dropout}, rng);
    }
  }

  /// One d-vector per pinyin row: [rows x d].
  Tensor<T> characters(const PinyinBatch& pinyin) const {
    const std::size_t rows = pinyin.rows, width = pinyin.width;
    std::vector<int> time_major(rows * width);
    for (std::size_t t = 0; t < width; ++t)
      for (std::size_t r = 0; r < rows; ++r) time_major[t * rows + r] = pinyin.ids[r * width + t];
    auto emb = nn::gather_rows(symbols_, std::span<const int>(time_major));
    auto h0 = Tensor<T>::zeros({rows, dims_.hidden});
    return gru_.run(emb, pinyin.lengths, h0).last;
  }

  /// `index` maps every grid position to its row in `pinyin`.
  Tensor<T> operator()(const PinyinBatch& pinyin, std::span<const int> index, std::span<const std::uint8_t> mask,
                       std::size_t batch, std::size_t len, const ForwardContext& ctx) const {
    if (len > dims_.max_len) throw nn::ShapeError("phonetic encoder: length exceeds max_len");
    const auto pos = position_ids(batch, len);
    auto x = nn::gather_rows(characters(pinyin), index);
    x = norm_(nn::add(x, nn::gather_rows(position_, std::span<const int>(pos))));
    x = nn::maybe_dropout(x, static_cast<T>(dims_.dropout), ctx);
    for (const auto& layer : layers_) x = layer(x, mask, batch, len, ctx);
    return x;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".symbol_embedding", symbols_, true});
    gru_.collect(prefix + ".gru", out);
    out.push_back({prefix + ".position_embedding", position_, true});
    norm_.collect(prefix + ".embedding_norm", out);
    for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect(prefix + ".layer" + std::to_string(l), out);
  }

 private:
  EncoderDims dims_;
  Tensor<T> symbols_;
  nn::GruCell<T> gru_;
  Tensor<T> position_;
  nn::LayerNorm<T> norm_;
  std::vector<nn::TransformerLayer<T>> layers_;
};

/// Channel widths of the five residual stages ending at `hidden`.
inline std::vector<std::size_t> graphic_channels(std::size_t hidden) {
  std::vector<std::size_t> ch = {hidden / 8, hidden / 4, hidden / 2, 3 * hidden / 4, hidden};
  for (auto& c : ch) c = std::max<std::size_t>(c, 1);
  return ch;
}

/// Five stride-2 residual blocks take a 3x32x32 bitmap to d x 1 x 1,
/// followed by LayerNorm. Characters are encoded independently.
template <typename T>
class GraphicEncoder {
 public:
  GraphicEncoder() = default;
  GraphicEncoder(std::size_t hidden, std::size_t channels, Rng& rng) : hidden_(hidden) {
    std::size_t in = channels;
    for (std::size_t c : graphic_channels(hidden)) {
      blocks_.emplace_back(in, c, rng);
      in = c;
    }
    norm_ = nn::LayerNorm<T>(hidden);
  }

  /// [n x 3 x 32 x 32] images -> [n x d].
  Tensor<T> images(const Tensor<T>& x, std::vector<nn::Shape>* trace = nullptr) const {
    if (x.ndim() != 4 || x.dim(2) != GlyphImage::kSize || x.dim(3) != GlyphImage::kSize) {
      throw nn::ShapeError("graphic encoder: expected [n x c x 32 x 32], got " + nn::shape_str(x.shape()));
    }
    Tensor<T> h = x;
    if (trace) trace->push_back(h.shape());
    for (const auto& block : blocks_) {
      h = block(h);
      if (trace) trace->push_back(h.shape());
    }
    return norm_(nn::reshape(h, {x.dim(0), hidden_}));
  }

  /// Per-position rows gathered from the encoded unique images.
  Tensor<T> operator()(const Tensor<T>& unique_images, std::span<const int> index) const {
    return nn::gather_rows(images(unique_images), index);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect(prefix + ".block" + std::to_string(b), out);
    norm_.collect(prefix + ".norm", out);
  }

 private:
  std::size_t hidden_ = 0;
  std::vector<nn::ResBlock<T>> blocks_;
  nn::LayerNorm<T> norm_;
};

}  // namespace realise
