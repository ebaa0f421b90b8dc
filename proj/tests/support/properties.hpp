// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradient_suite.hpp"
#include "realise/eval.hpp"
#include "realise/model.hpp"
#include "realise/toy.hpp"

// Property checks shared by the unit tests and the acceptance runner. Each
// returns an empty string on success and a description of the first
// violation otherwise.
namespace realise::oracle {

inline constexpr double kRowSumTolerance = 1e-6;
inline constexpr double kFusionTolerance = 1e-6;

/// Graphic trace, encoder and fusion shapes, and row-stochastic output.
inline std::string shape_suite() {
  std::ostringstream err;
  const auto& w = tiny_world();
  auto cfg = tiny_model_config(w.vocab.size());
  cfg.hidden = 16;
  cfg.ffn = 32;
  Realise<double> model(cfg, 5);
  InputBuilder builder(w.vocab, w.pinyin, w.atlas);
  const Batch b = make_batch(w.train, w.vocab, cfg.max_len);
  const auto in = builder.build<double>(b);
  const std::size_t n = in.batch * in.len, d = cfg.hidden;

  std::vector<nn::Shape> trace;
  model.graphic().images(in.images, &trace);
  const std::size_t u = in.images.dim(0);
  const std::vector<std::size_t> spatial = {32, 16, 8, 4, 2, 1};
  if (trace.size() != spatial.size()) err << "graphic trace has " << trace.size() << " entries; ";
  for (std::size_t k = 0; k < std::min(trace.size(), spatial.size()); ++k) {
    const auto& s = trace[k];
    if (s.size() != 4 || s[0] != u || s[2] != spatial[k] || s[3] != spatial[k]) {
      err << "graphic stage " << k << " has shape " << nn::shape_str(s) << "; ";
    }
  }
  if (!trace.empty() && trace.back()[1] != d) err << "graphic channels end at " << trace.back()[1] << "; ";

  const auto out = model.forward(in, {});
  for (const auto& [name, t] : {std::pair{"semantic", out.semantic}, std::pair{"phonetic", out.phonetic},
                                std::pair{"graphic", out.graphic}}) {
    if (t.shape() != nn::Shape{n, d}) err << name << " output " << nn::shape_str(t.shape()) << "; ";
  }
  const auto fused = model.fuse(out.semantic, out.phonetic, out.graphic, in.mask, in.batch, in.len);
  if (fused.mixed.shape() != nn::Shape{n, d}) err << "fusion output " << nn::shape_str(fused.mixed.shape()) << "; ";
  if (fused.gates.shape() != nn::Shape{n, 3}) err << "gates " << nn::shape_str(fused.gates.shape()) << "; ";
  if (out.logits.shape() != nn::Shape{n, cfg.vocab_size}) err << "logits " << nn::shape_str(out.logits.shape()) << "; ";

  const auto probs = nn::softmax_rows(out.logits);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < cfg.vocab_size; ++j) s += probs[r * cfg.vocab_size + j];
    if (std::abs(s - 1.0) > kRowSumTolerance) {
      err << "row " << r << " sums to " << s << "; ";
      break;
    }
  }
  return err.str();
}

/// Gated sum recomputed with plain loops from the gate parameters.
inline std::vector<double> fusion_reference(const nn::Linear<double>& gate, const std::vector<double>& ht,
                                            const std::vector<double>& ha, const std::vector<double>& hv,
                                            const std::vector<std::uint8_t>& mask, std::size_t batch, std::size_t len,
                                            std::size_t d, std::vector<double>* gates_out = nullptr) {
  const auto& w = gate.weight().data();  // [4d x 3]
  const auto& bias = gate.bias().data();
  std::vector<double> out(batch * len * d);
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<double> mean(d, 0.0);
    double count = 0;
    for (std::size_t t = 0; t < len; ++t) {
      if (!mask[b * len + t]) continue;
      count += 1;
      for (std::size_t k = 0; k < d; ++k) mean[k] += ht[(b * len + t) * d + k];
    }
    for (auto& m : mean) m = count > 0 ? m / count : 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t row = b * len + t;
      double g[3];
      for (std::size_t o = 0; o < 3; ++o) {
        double z = bias[o];
        for (std::size_t k = 0; k < d; ++k) {
          z += ht[row * d + k] * w[k * 3 + o];
          z += ha[row * d + k] * w[(d + k) * 3 + o];
          z += hv[row * d + k] * w[(2 * d + k) * 3 + o];
          z += mean[k] * w[(3 * d + k) * 3 + o];
        }
        g[o] = 1.0 / (1.0 + std::exp(-z));
        if (gates_out) gates_out->push_back(g[o]);
      }
      for (std::size_t k = 0; k < d; ++k)
        out[row * d + k] = g[0] * ht[row * d + k] + g[1] * ha[row * d + k] + g[2] * hv[row * d + k];
    }
  }
  return out;
}

struct FusionOracleResult {
  double max_error = 0.0;
  bool forced_exact = true;
  std::size_t inputs = 0;
};

/// `inputs` random configurations compared element-wise with the loop
/// reference, then the gates saturated to (1, 0, 0).
inline FusionOracleResult fusion_oracle(std::size_t inputs, std::uint64_t seed = 11) {
  FusionOracleResult res;
  std::mt19937_64 rng(seed);
  auto cfg = tiny_model_config(tiny_world().vocab.size());
  for (std::size_t k = 0; k < inputs; ++k) {
    cfg.hidden = 2 * pick(rng, 1, 6);
    cfg.heads = 2;
    Realise<double> model(cfg, seed + k);
    std::normal_distribution<double> big(0.0, 0.5);
    for (auto& v : model.gate().weight().data()) v = big(rng);
    for (auto& v : model.gate().bias().data()) v = big(rng);
    const std::size_t batch = pick(rng, 1, 3), len = pick(rng, 1, 5), d = cfg.hidden;
    auto ht = random_tensor({batch * len, d}, rng, 1.0, false);
    auto ha = random_tensor({batch * len, d}, rng, 1.0, false);
    auto hv = random_tensor({batch * len, d}, rng, 1.0, false);
    const auto mask = random_mask(rng, batch, len);
    const auto fused = model.fuse(ht, ha, hv, mask, batch, len);
    std::vector<double> gates;
    const auto ref = fusion_reference(model.gate(), {ht.data().begin(), ht.data().end()},
                                      {ha.data().begin(), ha.data().end()}, {hv.data().begin(), hv.data().end()},
                                      mask, batch, len, d, &gates);
    for (std::size_t i = 0; i < ref.size(); ++i)
      res.max_error = std::max(res.max_error, std::abs(ref[i] - fused.mixed.data()[i]));
    for (std::size_t i = 0; i < gates.size(); ++i)
      res.max_error = std::max(res.max_error, std::abs(gates[i] - fused.gates.data()[i]));

    for (auto& v : model.gate().weight().data()) v = 0.0;
    model.gate().bias().data()[0] = 1000.0;
    model.gate().bias().data()[1] = -1000.0;
    model.gate().bias().data()[2] = -1000.0;
    const auto forced = model.fuse(ht, ha, hv, mask, batch, len);
    for (std::size_t i = 0; i < forced.mixed.numel(); ++i) res.forced_exact &= forced.mixed.data()[i] == ht.data()[i];
    ++res.inputs;
  }
  return res;
}

/// Random corpus of up to five sentences over a four-letter alphabet, with
/// predictions that are sometimes perfect, sometimes identity, sometimes noise.
struct MetricCase {
  std::vector<CscExample> examples;
  std::vector<std::u32string> predictions;
};

inline MetricCase random_metric_case(std::mt19937_64& rng) {
  const std::u32string alphabet = U"甲乙丙丁";
  std::uniform_int_distribution<std::size_t> letter(0, alphabet.size() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  MetricCase mc;
  const std::size_t n = pick(rng, 1, 5);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t len = pick(rng, 1, 4);
    CscExample ex;
    for (std::size_t i = 0; i < len; ++i) ex.target.push_back(alphabet[letter(rng)]);
    ex.source = ex.target;
    for (auto& c : ex.source)
      if (coin(rng) < 0.3) c = alphabet[letter(rng)];
    std::u32string pred = ex.source;
    const double mode = coin(rng);
    if (mode < 0.3) {
      pred = ex.target;
    } else if (mode < 0.8) {
      for (std::size_t i = 0; i < len; ++i) {
        if (coin(rng) < 0.5) pred[i] = ex.target[i];
        if (coin(rng) < 0.2) pred[i] = alphabet[letter(rng)];
      }
    }
    mc.examples.push_back(ex);
    mc.predictions.push_back(pred);
  }
  return mc;
}

/// Hand enumeration of the sentence-level counts from explicit position sets.
inline EvalResult brute_force_metrics(const MetricCase& mc) {
  EvalResult r;
  r.sentences = mc.examples.size();
  for (std::size_t s = 0; s < mc.examples.size(); ++s) {
    const auto& ex = mc.examples[s];
    const auto& pred = mc.predictions[s];
    std::set<std::size_t> gold, flagged;
    for (std::size_t i = 0; i < ex.source.size(); ++i) {
      if (ex.source[i] != ex.target[i]) gold.insert(i);
      if (ex.source[i] != pred[i]) flagged.insert(i);
    }
    bool fixed = gold == flagged;
    for (std::size_t i : gold) fixed = fixed && pred[i] == ex.target[i];
    if (!gold.empty()) {
      ++r.detection.gold_positive;
      ++r.correction.gold_positive;
    }
    if (!flagged.empty()) {
      ++r.detection.flagged;
      ++r.correction.flagged;
      if (!gold.empty()) {
        ++r.detection.flagged_gold_positive;
        ++r.correction.flagged_gold_positive;
      }
    }
    if (gold == flagged) {
      ++r.detection.exact;
      if (!gold.empty()) ++r.detection.true_positive;
    }
    if (fixed) {
      ++r.correction.exact;
      if (!gold.empty()) ++r.correction.true_positive;
    }
  }
  for (auto* l : {&r.detection, &r.correction}) {
    l->accuracy = static_cast<double>(l->exact) / static_cast<double>(r.sentences);
    l->precision = l->flagged == 0 ? 0.0 : static_cast<double>(l->true_positive) / static_cast<double>(l->flagged);
    l->recall =
        l->gold_positive == 0 ? 0.0 : static_cast<double>(l->true_positive) / static_cast<double>(l->gold_positive);
    l->f1 = l->precision + l->recall == 0.0 ? 0.0 : 2.0 * l->precision * l->recall / (l->precision + l->recall);
  }
  return r;
}

inline std::string compare_levels(const LevelScores& a, const LevelScores& b, const char* level) {
  std::ostringstream err;
  if (a.accuracy != b.accuracy || a.precision != b.precision || a.recall != b.recall || a.f1 != b.f1 ||
      a.true_positive != b.true_positive || a.flagged != b.flagged || a.gold_positive != b.gold_positive ||
      a.flagged_gold_positive != b.flagged_gold_positive || a.exact != b.exact) {
    err << level << " scores differ (P " << a.precision << " vs " << b.precision << ", R " << a.recall << " vs "
        << b.recall << ", acc " << a.accuracy << " vs " << b.accuracy << "); ";
  }
  return err.str();
}

inline std::string metric_oracle(std::size_t corpora, std::uint64_t seed = 21) {
  std::mt19937_64 rng(seed);
  std::string err;
  for (std::size_t k = 0; k < corpora && err.empty(); ++k) {
    const auto mc = random_metric_case(rng);
    const auto got = evaluate(mc.predictions, mc.examples);
    const auto want = brute_force_metrics(mc);
    err += compare_levels(got.detection, want.detection, "detection");
    err += compare_levels(got.correction, want.correction, "correction");
    if (got.correction.f1 > got.detection.f1) err += "correction F1 above detection F1; ";
    if (!err.empty()) err = "corpus " + std::to_string(k) + ": " + err;
  }
  return err;
}

struct PostProcessCase {
  std::u32string source;
  std::u32string prediction;
};

/// Fixed-seed fixture mixing auxiliary and ordinary characters.
inline std::vector<PostProcessCase> post_process_fixture(std::size_t n = 50, std::uint64_t seed = 31) {
  const std::u32string alphabet = U"的地得很跟我快去";
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> letter(0, alphabet.size() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<PostProcessCase> out;
  out.push_back({U"他跑的很快", U"他跑得很快"});
  out.push_back({U"我跟快去", U"我很快去"});
  out.push_back({U"我的书", U"我的书"});
  while (out.size() < n) {
    PostProcessCase c;
    const std::size_t len = pick(rng, 1, 8);
    for (std::size_t i = 0; i < len; ++i) c.source.push_back(alphabet[letter(rng)]);
    c.prediction = c.source;
    for (auto& ch : c.prediction)
      if (coin(rng) < 0.4) ch = alphabet[letter(rng)];
    out.push_back(c);
  }
  return out;
}

inline std::string post_process_check(const std::vector<PostProcessCase>& fixture) {
  const PostProcessRule rule;
  const auto listed = [&](char32_t c) { return rule.characters.find(c) != std::u32string::npos; };
  std::ostringstream err;
  for (std::size_t k = 0; k < fixture.size(); ++k) {
    const auto& c = fixture[k];
    const auto once = post_process(c.source, c.prediction, rule);
    if (post_process(c.source, once, rule) != once) err << "case " << k << " not idempotent; ";
    for (std::size_t i = 0; i < once.size(); ++i) {
      const bool edited = c.prediction[i] != c.source[i];
      const bool revert = edited && (listed(c.prediction[i]) || listed(c.source[i]));
      const char32_t want = revert ? c.source[i] : c.prediction[i];
      if (once[i] != want) err << "case " << k << " position " << i << " wrong; ";
    }
  }
  if (post_process(U"他跑的很快", U"他跑得很快", rule) != U"他跑的很快") err << "的 to 得 edit kept; ";
  if (post_process(U"我跟快去", U"我很快去", rule) != U"我很快去") err << "跟 to 很 edit reverted; ";
  return err.str();
}

}  // namespace realise::oracle
