// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "realise/corpus.hpp"
#include "realise/eval.hpp"
#include "realise/glyph.hpp"
#include "realise/model.hpp"
#include "realise/neural/checkpoint.hpp"
#include "realise/neural/optim.hpp"
#include "realise/pinyin.hpp"

namespace realise {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double peak_lr = 1e-3;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;
  std::size_t max_len = 32;
  double dropout = 0.1;
  double dev_fraction = 0.1;

  std::size_t hidden = 64;
  std::size_t heads = 2;
  std::size_t ffn = 256;
  std::size_t semantic_layers = 2;
  std::size_t phonetic_layers = 4;
  std::size_t fusion_layers = 3;
  std::size_t pinyin_embed = 32;

  bool no_phonetic = false;
  bool no_graphic = false;
  bool single_font = false;
  bool no_pretraining = false;
  bool no_selective_fusion = false;

  std::string train_corpus;
  std::string eval_corpus;
  std::string vocab;
  std::string pinyin_table;
  std::string atlas;
  std::string checkpoint_dir = "checkpoints";
  std::string acoustic_checkpoint;  // defaults to <checkpoint_dir>/acoustic.bin
  std::string visual_checkpoint;    // defaults to <checkpoint_dir>/visual.bin
  std::string resume;
  std::size_t stop_after = 0;  // end the run after this many epochs; 0 runs all
  bool verbose = true;

  std::vector<std::string> validate() const {
    std::vector<std::string> out;
    if (epochs < 1) out.push_back("epochs must be >= 1");
    if (batch_size < 1) out.push_back("batch_size must be >= 1");
    if (warmup_fraction < 0.0 || warmup_fraction > 1.0) out.push_back("warmup_fraction must lie in [0, 1]");
    if (dev_fraction < 0.0 || dev_fraction >= 1.0) out.push_back("dev_fraction must lie in [0, 1)");
    if (max_len < 3) out.push_back("max_len must be >= 3");
    if (heads == 0 || hidden % heads != 0) out.push_back("hidden must be divisible by heads");
    return out;
  }

  ModelConfig model(std::size_t vocab_size) const {
    ModelConfig m;
    m.vocab_size = vocab_size;
    m.hidden = hidden;
    m.heads = heads;
    m.ffn = ffn;
    m.semantic_layers = semantic_layers;
    m.phonetic_layers = phonetic_layers;
    m.fusion_layers = fusion_layers;
    m.pinyin_embed = pinyin_embed;
    m.max_len = max_len;
    m.dropout = dropout;
    m.use_phonetic = !no_phonetic;
    m.use_graphic = !no_graphic;
    m.single_font = single_font;
    m.selective_fusion = !no_selective_fusion;
    return m;
  }

  std::string acoustic_path() const {
    return acoustic_checkpoint.empty() ? (std::filesystem::path(checkpoint_dir) / "acoustic.bin").string()
                                       : acoustic_checkpoint;
  }
  std::string visual_path() const {
    return visual_checkpoint.empty() ? (std::filesystem::path(checkpoint_dir) / "visual.bin").string()
                                     : visual_checkpoint;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, epochs, batch_size, peak_lr, warmup_fraction,
                                                weight_decay, seed, max_len, dropout, dev_fraction, hidden, heads,
                                                ffn, semantic_layers, phonetic_layers, fusion_layers, pinyin_embed,
                                                no_phonetic, no_graphic, single_font, no_pretraining,
                                                no_selective_fusion, train_corpus, eval_corpus, vocab, pinyin_table,
                                                atlas, checkpoint_dir, acoustic_checkpoint, visual_checkpoint,
                                                resume, stop_after, verbose)

struct TrainReport {
  std::string kind;
  std::vector<double> epoch_loss;
  std::vector<double> step_loss;
  std::vector<double> dev_metric;  // recovery accuracy, OCR accuracy or correction F1
  double initial_loss = 0.0;
  std::size_t skipped_steps = 0;
  nlohmann::json final_metrics = nlohmann::json::object();
  double wall_clock_seconds = 0.0;
  TrainConfig config;
  std::string checkpoint;
  std::vector<std::string> warnings;
};

void to_json(nlohmann::json& j, const TrainReport& r);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Data shared by the three procedures.
struct Resources {
  Vocabulary vocab;
  PinyinTable pinyin;
  GlyphAtlas atlas;
  std::vector<CscExample> train;
  std::vector<CscExample> eval;
  std::vector<std::string> warnings;
};

/// Vocabulary from file, or else every character of the training corpus in
/// order of first appearance.
Resources load_resources(const TrainConfig& cfg, bool need_corpus = true);

namespace train_detail {

inline std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

/// Held-out dev indices (first `dev_fraction` of a seeded permutation).
inline std::pair<std::vector<CscExample>, std::vector<CscExample>> split(const std::vector<CscExample>& all,
                                                                          double dev_fraction, std::uint64_t seed) {
  auto idx = shuffled(all.size(), seed ^ 0xD5EDULL, 0);
  const auto n_dev = static_cast<std::size_t>(std::floor(dev_fraction * static_cast<double>(all.size())));
  std::vector<std::size_t> dev_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_dev));
  std::vector<std::size_t> train_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_dev), idx.end());
  std::sort(dev_idx.begin(), dev_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::pair<std::vector<CscExample>, std::vector<CscExample>> out;
  for (auto i : train_idx) out.first.push_back(all[i]);
  for (auto i : dev_idx) out.second.push_back(all[i]);
  return out;
}

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

inline nn::WarmupLinearSchedule schedule(const TrainConfig& cfg, std::size_t per_epoch) {
  const std::size_t total = per_epoch * cfg.epochs;
  const auto warmup = static_cast<std::size_t>(std::llround(cfg.warmup_fraction * static_cast<double>(total)));
  return nn::WarmupLinearSchedule(cfg.peak_lr, warmup, total);
}

inline void check_finite(double loss, const std::string& kind, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw TrainingDiverged(kind + ": non-finite loss at step " + std::to_string(step) + "; aborting");
  }
}

inline void log(const TrainConfig& cfg, const std::string& line) {
  if (cfg.verbose) std::cerr << line << std::endl;
}

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

template <typename T>
nlohmann::json checkpoint_meta(const std::string& kind, const ModelConfig& model, const TrainConfig& cfg) {
  nlohmann::json meta;
  meta["kind"] = kind;
  meta["model"] = model;
  meta["train"] = cfg;
  // Output locations are left out so identical runs write identical sidecars.
  for (const char* key :
       {"verbose", "checkpoint_dir", "acoustic_checkpoint", "visual_checkpoint", "resume", "stop_after"}) {
    meta["train"].erase(key);
  }
  return meta;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir + ": " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

inline std::vector<CscExample> slice(const std::vector<CscExample>& all, const std::vector<std::size_t>& order,
                                     std::size_t start, std::size_t count) {
  std::vector<CscExample> out;
  for (std::size_t i = start; i < std::min(order.size(), start + count); ++i) out.push_back(all[order[i]]);
  return out;
}

}  // namespace train_detail

/// Fraction of non-special positions where the input-method head recovers
/// the target character from the source pinyin.
template <typename T>
double acoustic_recovery(const Realise<T>& model, const InputBuilder& builder, const Vocabulary& vocab,
                         const std::vector<CscExample>& examples, std::size_t batch_size = 32) {
  nn::NoGradGuard no_grad;
  std::size_t hit = 0, total = 0;
  const std::size_t v = vocab.size();
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    std::vector<CscExample> chunk(examples.begin() + static_cast<std::ptrdiff_t>(start),
                                  examples.begin() + static_cast<std::ptrdiff_t>(std::min(examples.size(), start + batch_size)));
    const Batch b = make_batch(chunk, vocab, model.config().max_len);
    const auto in = builder.build<T>(b);
    const auto tgt = trimmed_targets(b, in.len);
    const auto logits = model.acoustic_logits(in, ForwardContext{});
    const auto data = logits.data();
    for (std::size_t row = 0; row < tgt.ids.size(); ++row) {
      if (!tgt.active[row]) continue;
      const auto* lg = data.data() + row * v;
      const auto best = static_cast<int>(std::max_element(lg, lg + v) - lg);
      hit += best == tgt.ids[row];
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

/// Fraction of vocabulary characters the OCR head classifies correctly.
template <typename T>
double visual_accuracy(const Realise<T>& model, const InputBuilder& builder, std::size_t vocab_size,
                       std::size_t batch_size = 64) {
  nn::NoGradGuard no_grad;
  std::size_t hit = 0, total = 0;
  for (std::size_t start = Vocabulary::kNumSpecial; start < vocab_size; start += batch_size) {
    std::vector<int> ids;
    for (std::size_t id = start; id < std::min(vocab_size, start + batch_size); ++id) ids.push_back(static_cast<int>(id));
    const auto logits = model.visual_logits(builder.images<T>(ids));
    const auto data = logits.data();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const auto* lg = data.data() + r * vocab_size;
      hit += static_cast<int>(std::max_element(lg, lg + vocab_size) - lg) == ids[r];
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

/// Predictions for a list of examples, optionally post-processed.
template <typename T>
std::vector<Correction> predict_corpus(const Realise<T>& model, const InputBuilder& builder, const Vocabulary& vocab,
                                       const std::vector<CscExample>& examples) {
  std::vector<std::u32string> sources;
  for (const auto& ex : examples) sources.push_back(ex.source);
  return correct_sentences(model, builder, vocab, sources);
}

template <typename T>
EvalResult evaluate_model(const Realise<T>& model, const InputBuilder& builder, const Vocabulary& vocab,
                          const std::vector<CscExample>& examples, bool post_processing = false) {
  auto corrections = predict_corpus(model, builder, vocab, examples);
  std::vector<std::u32string> preds;
  for (std::size_t i = 0; i < corrections.size(); ++i) {
    preds.push_back(post_processing ? post_process(examples[i].source, corrections[i].text) : corrections[i].text);
  }
  return evaluate(preds, examples);
}

/// Input-method pretraining: source pinyin in, target characters out.
TrainReport pretrain_acoustic(const TrainConfig& cfg, const Resources& res);

/// OCR pretraining: classify every vocabulary character from its bitmap.
TrainReport pretrain_visual(const TrainConfig& cfg, const Resources& res);

/// Loads a fine-tuned checkpoint (model tensors only) with its config.
Realise<float> load_model(const std::string& path);

/// Full correction training. Every non-special position is supervised.
/// Writes last.bin (with optimizer state) each epoch and keeps the best
/// dev-F1 model in best.bin.
TrainReport finetune(const TrainConfig& cfg, const Resources& res);

}  // namespace realise
