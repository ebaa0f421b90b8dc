// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "realise/corpus.hpp"
#include "realise/encoders.hpp"
#include "realise/glyph.hpp"
#include "realise/neural/checkpoint.hpp"
#include "realise/pinyin.hpp"

namespace realise {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;
  std::size_t heads = 2;
  std::size_t ffn = 256;
  std::size_t semantic_layers = 2;
  std::size_t phonetic_layers = 4;
  std::size_t fusion_layers = 3;
  std::size_t pinyin_embed = 32;
  std::size_t max_len = 32;
  double dropout = 0.1;
  bool use_phonetic = true;
  bool use_graphic = true;
  bool single_font = false;
  bool selective_fusion = true;

  EncoderDims dims() const { return {vocab_size, hidden, heads, ffn, max_len, dropout}; }
  std::size_t glyph_channels() const { return single_font ? 1 : GlyphImage::kChannels; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, vocab_size, hidden, heads, ffn, semantic_layers,
                                                phonetic_layers, fusion_layers, pinyin_embed, max_len, dropout,
                                                use_phonetic, use_graphic, single_font, selective_fusion)

/// Everything the forward pass needs for one padded batch. Pinyin and
/// glyphs are stored once per distinct token id and gathered per position.
template <typename T>
struct ModelInput {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
  PinyinBatch pinyin;
  Tensor<T> images;  // [unique x channels x 32 x 32], bytes / 255
  std::vector<int> unique_index;
};

/// Caches per-id pinyin and glyph bitmaps for a fixed vocabulary.
class InputBuilder {
 public:
  InputBuilder(const Vocabulary& vocab, const PinyinTable& table, const GlyphAtlas& atlas, bool single_font = false)
      : single_font_(single_font) {
    for (std::size_t id = 0; id < vocab.size(); ++id) {
      const auto ch = vocab.character(static_cast<int>(id));
      if (!ch) {
        pinyin_.push_back(no_pinyin());
        glyphs_.push_back(GlyphAtlas::blank());
        continue;
      }
      pinyin_.push_back(decompose(*ch, table));
      glyphs_.push_back(atlas.lookup(*ch, &warnings_));
    }
  }

  const std::vector<std::string>& warnings() const { return warnings_; }
  const PinyinSeq& pinyin(int id) const { return pinyin_.at(static_cast<std::size_t>(id)); }
  const GlyphImage& glyph(int id) const { return glyphs_.at(static_cast<std::size_t>(id)); }
  std::size_t channels() const { return single_font_ ? 1 : GlyphImage::kChannels; }

  /// Normalized [n x channels x 32 x 32] tensor for the given ids.
  template <typename T>
  Tensor<T> images(std::span<const int> ids) const {
    const std::size_t ch = channels(), plane = GlyphImage::kPlane;
    std::vector<T> v(ids.size() * ch * plane);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const auto& px = glyph(ids[r]).pixels;
      for (std::size_t k = 0; k < ch * plane; ++k) v[r * ch * plane + k] = static_cast<T>(px[k]) / T{255};
    }
    return Tensor<T>({ids.size(), ch, GlyphImage::kSize, GlyphImage::kSize}, std::move(v));
  }

  template <typename T>
  ModelInput<T> build(std::vector<int> ids, std::vector<std::uint8_t> mask, std::size_t batch, std::size_t len) const {
    ModelInput<T> in;
    in.batch = batch;
    in.len = len;
    in.ids = std::move(ids);
    in.mask = std::move(mask);
    std::map<int, int> slot;
    std::vector<int> unique;
    in.unique_index.reserve(in.ids.size());
    for (int id : in.ids) {
      auto [it, fresh] = slot.emplace(id, static_cast<int>(unique.size()));
      if (fresh) unique.push_back(id);
      in.unique_index.push_back(it->second);
    }
    std::vector<PinyinSeq> seqs;
    for (int id : unique) seqs.push_back(pinyin(id));
    in.pinyin = encode_batch(seqs);
    in.images = images<T>(unique);
    return in;
  }

  /// Source side of a corpus batch, trimmed to its longest row.
  template <typename T>
  ModelInput<T> build(const Batch& b) const {
    std::size_t len = 0;
    for (std::size_t r = 0; r < b.rows; ++r) {
      std::size_t n = 0;
      for (std::size_t t = 0; t < b.len; ++t) n += b.mask[r * b.len + t];
      len = std::max(len, n);
    }
    std::vector<int> ids(b.rows * len);
    std::vector<std::uint8_t> mask(b.rows * len);
    for (std::size_t r = 0; r < b.rows; ++r)
      for (std::size_t t = 0; t < len; ++t) {
        ids[r * len + t] = b.source_ids[r * b.len + t];
        mask[r * len + t] = b.mask[r * b.len + t];
      }
    return build<T>(std::move(ids), std::move(mask), b.rows, len);
  }

 private:
  bool single_font_ = false;
  std::vector<PinyinSeq> pinyin_;
  std::vector<GlyphImage> glyphs_;
  std::vector<std::string> warnings_;
};

/// Targets and loss mask of a corpus batch, trimmed like InputBuilder::build.
struct Targets {
  std::vector<int> ids;
  std::vector<std::uint8_t> active;
};

inline Targets trimmed_targets(const Batch& b, std::size_t len) {
  Targets t;
  t.ids.resize(b.rows * len);
  t.active.resize(b.rows * len);
  for (std::size_t r = 0; r < b.rows; ++r)
    for (std::size_t k = 0; k < len; ++k) {
      t.ids[r * len + k] = b.target_ids[r * b.len + k];
      t.active[r * len + k] = b.loss_mask[r * b.len + k];
    }
  return t;
}

template <typename T>
struct FusionResult {
  Tensor<T> mixed;  // [rows x d]
  Tensor<T> gates;  // [rows x 3]: textual, acoustic, visual
};

template <typename T>
struct ModelOutput {
  Tensor<T> logits;
  Tensor<T> gates;
  Tensor<T> semantic;
  Tensor<T> phonetic;
  Tensor<T> graphic;
};

/// Per-character (textual, acoustic, visual) gates of one sentence.
struct GateTrace {
  std::vector<std::array<double, 3>> gates;
};

struct Correction {
  std::u32string text;
  GateTrace trace;
};

/// Semantic, phonetic and graphic encoders, gated fusion, fusion transformer
/// and tied output projection, plus the two pretraining heads.
template <typename T>
class Realise {
 public:
  Realise(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    if (config.vocab_size <= static_cast<std::size_t>(Vocabulary::kNumSpecial)) {
      throw std::invalid_argument("model: vocabulary has no characters");
    }
    Rng rng(seed);
    const auto dims = config.dims();
    semantic_ = SemanticEncoder<T>(dims, config.semantic_layers, rng);
    phonetic_ = PhoneticEncoder<T>(dims, config.phonetic_layers, config.pinyin_embed, rng);
    graphic_ = GraphicEncoder<T>(config.hidden, config.glyph_channels(), rng);
    gate_ = nn::Linear<T>(4 * config.hidden, 3, rng);
    for (std::size_t l = 0; l < config.fusion_layers; ++l) {
      fusion_.emplace_back(nn::TransformerSpec{config.hidden, config.heads, config.ffn, config.dropout}, rng);
    }
    output_bias_ = nn::zeros_param<T>({config.vocab_size});
    acoustic_head_ = nn::Linear<T>(config.hidden, config.vocab_size, rng);
    visual_head_ = nn::Linear<T>(config.hidden, config.vocab_size, rng);
  }

  const ModelConfig& config() const { return config_; }

  /// Gate-weighted sum of the three modalities. With selective fusion off
  /// the gates are pinned to one.
  FusionResult<T> fuse(const Tensor<T>& ht, const Tensor<T>& ha, const Tensor<T>& hv,
                       std::span<const std::uint8_t> mask, std::size_t batch, std::size_t len) const {
    if (ht.shape() != ha.shape() || ht.shape() != hv.shape()) {
      throw nn::ShapeError("fuse: modality shapes differ: " + nn::shape_str(ht.shape()) + ", " +
                           nn::shape_str(ha.shape()) + ", " + nn::shape_str(hv.shape()));
    }
    const std::size_t rows = ht.rows();
    if (!config_.selective_fusion) {
      return {nn::add(nn::add(ht, ha), hv), Tensor<T>::full({rows, 3}, T{1})};
    }
    auto mean = nn::masked_row_mean(ht, mask, batch, len);
    std::vector<int> owner(rows);
    for (std::size_t i = 0; i < rows; ++i) owner[i] = static_cast<int>(i / len);
    auto context = nn::gather_rows(mean, std::span<const int>(owner));
    auto gates = nn::sigmoid(gate_(nn::concat_cols(std::vector<Tensor<T>>{ht, ha, hv, context})));
    auto mixed = nn::mul_colvec(ht, nn::slice_cols(gates, 0, 1));
    mixed = nn::add(mixed, nn::mul_colvec(ha, nn::slice_cols(gates, 1, 1)));
    mixed = nn::add(mixed, nn::mul_colvec(hv, nn::slice_cols(gates, 2, 1)));
    return {mixed, gates};
  }

  /// Fusion transformer then logits h E^T + b over the tied token table.
  Tensor<T> predict(const Tensor<T>& mixed, std::span<const std::uint8_t> mask, std::size_t batch, std::size_t len,
                    const ForwardContext& ctx) const {
    Tensor<T> h = mixed;
    for (const auto& layer : fusion_) h = layer(h, mask, batch, len, ctx);
    return nn::add_rowvec(nn::matmul(h, semantic_.token_embedding(), false, true), output_bias_);
  }

  ModelOutput<T> forward(const ModelInput<T>& in, const ForwardContext& ctx) const {
    ModelOutput<T> out;
    const std::size_t rows = in.batch * in.len;
    out.semantic = semantic_(in.ids, in.mask, in.batch, in.len, ctx);
    out.phonetic = config_.use_phonetic
                       ? phonetic_(in.pinyin, in.unique_index, in.mask, in.batch, in.len, ctx)
                       : Tensor<T>::zeros({rows, config_.hidden});
    out.graphic = config_.use_graphic ? graphic_(in.images, in.unique_index) : Tensor<T>::zeros({rows, config_.hidden});
    auto fused = fuse(out.semantic, out.phonetic, out.graphic, in.mask, in.batch, in.len);
    out.gates = fused.gates;
    out.logits = predict(fused.mixed, in.mask, in.batch, in.len, ctx);
    return out;
  }

  /// Input-method head: character logits from pinyin alone.
  Tensor<T> acoustic_logits(const ModelInput<T>& in, const ForwardContext& ctx) const {
    return acoustic_head_(phonetic_(in.pinyin, in.unique_index, in.mask, in.batch, in.len, ctx));
  }

  /// OCR head: character logits from [n x channels x 32 x 32] images.
  Tensor<T> visual_logits(const Tensor<T>& images) const { return visual_head_(graphic_.images(images)); }

  const SemanticEncoder<T>& semantic() const { return semantic_; }
  SemanticEncoder<T>& semantic() { return semantic_; }
  const PhoneticEncoder<T>& phonetic() const { return phonetic_; }
  const GraphicEncoder<T>& graphic() const { return graphic_; }
  nn::Linear<T>& gate() { return gate_; }
  Tensor<T>& output_bias() { return output_bias_; }

  /// All parameters. Prefixes: semantic, phonetic, graphic, fusion, output,
  /// acoustic_head, visual_head. Disabled modalities are left out.
  ParamList<T> parameters() const {
    ParamList<T> out;
    semantic_.collect("semantic", out);
    if (config_.use_phonetic) phonetic_.collect("phonetic", out);
    if (config_.use_graphic) graphic_.collect("graphic", out);
    if (config_.selective_fusion) gate_.collect("fusion.gate", out);
    for (std::size_t l = 0; l < fusion_.size(); ++l) fusion_[l].collect("fusion.layer" + std::to_string(l), out);
    out.push_back({"output.bias", output_bias_, false});
    return out;
  }

  ParamList<T> acoustic_parameters() const {
    ParamList<T> out;
    phonetic_.collect("phonetic", out);
    acoustic_head_.collect("acoustic_head", out);
    return out;
  }

  ParamList<T> visual_parameters() const {
    ParamList<T> out;
    graphic_.collect("graphic", out);
    visual_head_.collect("visual_head", out);
    return out;
  }

  /// Copies every stored tensor whose name starts with `prefix` into the
  /// matching live parameter; returns how many were loaded.
  std::size_t load(const nn::TensorMap& stored, const std::string& prefix) {
    ParamList<T> all = parameters();
    for (auto& p : acoustic_parameters()) all.push_back(p);
    for (auto& p : visual_parameters()) all.push_back(p);
    std::set<std::string> seen;
    std::size_t n = 0;
    for (auto& p : all) {
      if (p.name.rfind(prefix, 0) != 0 || !seen.insert(p.name).second) continue;
      auto it = stored.find(p.name);
      if (it == stored.end()) throw nn::CheckpointError("checkpoint lacks tensor " + p.name);
      nn::assign(p.tensor, it->second, p.name);
      ++n;
    }
    return n;
  }

 private:
  ModelConfig config_;
  SemanticEncoder<T> semantic_;
  PhoneticEncoder<T> phonetic_;
  GraphicEncoder<T> graphic_;
  nn::Linear<T> gate_;
  std::vector<nn::TransformerLayer<T>> fusion_;
  Tensor<T> output_bias_;
  nn::Linear<T> acoustic_head_;
  nn::Linear<T> visual_head_;
};

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> named_tensors(const ParamList<T>& params) {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (const auto& p : params) out.emplace_back(p.name, p.tensor);
  return out;
}

/// Batched inference. Output keeps the input length; specials and
/// out-of-vocabulary characters pass through unchanged, as do characters
/// beyond max_len - 2.
template <typename T>
std::vector<Correction> correct_sentences(const Realise<T>& model, const InputBuilder& builder,
                                          const Vocabulary& vocab, const std::vector<std::u32string>& sentences,
                                          std::size_t batch_size = 32) {
  nn::NoGradGuard no_grad;
  std::vector<Correction> out;
  out.reserve(sentences.size());
  const std::size_t max_len = model.config().max_len;
  for (std::size_t start = 0; start < sentences.size(); start += batch_size) {
    const std::size_t end = std::min(sentences.size(), start + batch_size);
    std::vector<CscExample> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back({sentences[i], sentences[i]});
    const Batch b = make_batch(chunk, vocab, max_len);
    const auto in = builder.build<T>(b);
    const auto result = model.forward(in, ForwardContext{});
    const std::size_t len = in.len, v = model.config().vocab_size;
    const auto logits = result.logits.data();
    const auto gates = result.gates.data();
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      Correction c;
      c.text = chunk[r].source;
      for (std::size_t k = 0; k < b.lengths[r]; ++k) {
        const std::size_t row = r * len + k + 1;
        const auto* lg = logits.data() + row * v;
        c.trace.gates.push_back({static_cast<double>(gates[row * 3]), static_cast<double>(gates[row * 3 + 1]),
                                 static_cast<double>(gates[row * 3 + 2])});
        if (!vocab.contains(c.text[k])) continue;
        std::size_t best = Vocabulary::kNumSpecial;
        for (std::size_t j = Vocabulary::kNumSpecial; j < v; ++j)
          if (lg[j] > lg[best]) best = j;
        c.text[k] = *vocab.character(static_cast<int>(best));
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

template <typename T>
Correction correct_sentence(const Realise<T>& model, const InputBuilder& builder, const Vocabulary& vocab,
                            const std::u32string& sentence) {
  return correct_sentences(model, builder, vocab, {sentence}, 1).front();
}

}  // namespace realise
