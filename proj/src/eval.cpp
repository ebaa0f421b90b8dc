// SPDX-License-Identifier: Apache-2.0
#include "realise/eval.hpp"

namespace realise {

void to_json(nlohmann::json& j, const LevelScores& s) {
  j = {{"accuracy", s.accuracy},
       {"precision", s.precision},
       {"recall", s.recall},
       {"f1", s.f1},
       {"true_positive", s.true_positive},
       {"flagged", s.flagged},
       {"flagged_gold_positive", s.flagged_gold_positive},
       {"gold_positive", s.gold_positive},
       {"exact", s.exact}};
}

void to_json(nlohmann::json& j, const EvalResult& r) {
  j = {{"sentences", r.sentences}, {"detection", r.detection}, {"correction", r.correction}};
}

double f1_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

void finish_scores(LevelScores& s, std::size_t n) {
  const auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  s.accuracy = ratio(s.exact, n);
  s.precision = ratio(s.true_positive, s.flagged);
  s.recall = ratio(s.true_positive, s.gold_positive);
  s.f1 = f1_score(s.precision, s.recall);
}

EvalResult evaluate(const std::vector<std::u32string>& predictions, const std::vector<CscExample>& examples) {
  if (predictions.size() != examples.size()) {
    throw EvalError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(examples.size()) + " examples");
  }
  EvalResult r;
  r.sentences = examples.size();
  for (std::size_t s = 0; s < examples.size(); ++s) {
    const auto& ex = examples[s];
    const auto& pred = predictions[s];
    if (pred.size() != ex.source.size()) {
      throw EvalError("evaluate: sentence " + std::to_string(s) + " has length " + std::to_string(pred.size()) +
                      ", expected " + std::to_string(ex.source.size()));
    }
    bool any_gold = false, any_pred = false, same_set = true;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool g = ex.target[i] != ex.source[i];
      const bool p = pred[i] != ex.source[i];
      any_gold |= g;
      any_pred |= p;
      same_set &= g == p;
    }
    const bool fixed = same_set && pred == ex.target;
    for (auto* level : {&r.detection, &r.correction}) {
      const bool hit = level == &r.detection ? same_set : fixed;
      level->gold_positive += any_gold;
      level->flagged += any_pred;
      level->flagged_gold_positive += any_pred && any_gold;
      level->exact += hit;
      level->true_positive += hit && any_gold;
    }
  }
  finish_scores(r.detection, r.sentences);
  finish_scores(r.correction, r.sentences);
  return r;
}

std::u32string post_process(const std::u32string& source, const std::u32string& prediction,
                                   const PostProcessRule& rule) {
  if (source.size() != prediction.size()) throw EvalError("post_process: length mismatch");
  std::u32string out = prediction;
  if (!rule.enabled) return out;
  const auto listed = [&](char32_t c) { return rule.characters.find(c) != std::u32string::npos; };
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] != source[i] && (listed(out[i]) || listed(source[i]))) out[i] = source[i];
  }
  return out;
}

GateStats gate_stats(const std::vector<GateTrace>& traces, const std::vector<CscExample>& examples) {
  if (traces.size() != examples.size()) throw EvalError("gate_stats: traces and examples differ in count");
  std::array<double, 3> err{}, clean{};
  GateStats st;
  for (std::size_t s = 0; s < examples.size(); ++s) {
    const auto& ex = examples[s];
    const std::size_t n = std::min(traces[s].gates.size(), ex.source.size());
    for (std::size_t i = 0; i < n; ++i) {
      const bool e = ex.source[i] != ex.target[i];
      auto& acc = e ? err : clean;
      for (int k = 0; k < 3; ++k) acc[k] += traces[s].gates[i][k];
      ++(e ? st.error_positions : st.clean_positions);
    }
  }
  auto mean = [](std::array<double, 3> a, std::size_t n) {
    for (auto& x : a) x /= static_cast<double>(n);
    return a;
  };
  if (st.error_positions) st.error_mean = mean(err, st.error_positions);
  if (st.clean_positions) st.clean_mean = mean(clean, st.clean_positions);
  return st;
}

void emit_trace_report(const std::vector<GateTrace>& traces, const std::vector<CscExample>& examples,
                              const std::string& path) {
  if (traces.size() != examples.size()) throw EvalError("emit_trace_report: traces and examples differ in count");
  std::ofstream os(path);
  if (!os) throw IoError("cannot write trace report " + path);
  for (std::size_t s = 0; s < examples.size(); ++s) {
    nlohmann::json rec;
    rec["sentence"] = utf8_encode(examples[s].source);
    rec["target"] = utf8_encode(examples[s].target);
    rec["gates"] = nlohmann::json::array();
    rec["errors"] = nlohmann::json::array();
    for (std::size_t i = 0; i < traces[s].gates.size(); ++i) {
      const auto& g = traces[s].gates[i];
      rec["gates"].push_back({g[0], g[1], g[2]});
      rec["errors"].push_back(i < examples[s].source.size() && examples[s].source[i] != examples[s].target[i]);
    }
    os << rec.dump() << "\n";
  }
  if (!os) throw IoError("write failed for " + path);
}

std::string format_table(const EvalResult& r, const std::string& label) {
  char buf[256];
  std::string out = "          | Detection Level           | Correction Level\n";
  out += "          | Acc.  Pre.  Rec.  F1.       | Acc.  Pre.  Rec.  F1.\n";
  const auto& d = r.detection;
  const auto& c = r.correction;
  std::snprintf(buf, sizeof buf, "%-10.10s| %5.1f %5.1f %5.1f %5.1f     | %5.1f %5.1f %5.1f %5.1f\n", label.c_str(),
                100 * d.accuracy, 100 * d.precision, 100 * d.recall, 100 * d.f1, 100 * c.accuracy,
                100 * c.precision, 100 * c.recall, 100 * c.f1);
  return out + buf;
}

}  // namespace realise
