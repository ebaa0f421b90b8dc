// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "realise/corpus.hpp"
#include "realise/model.hpp"

namespace realise {

/// Sentence-level scores for one level. Precision divides by flagged
/// sentences; the gold-positive share of those is reported alongside.
struct LevelScores {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positive = 0;
  std::size_t flagged = 0;
  std::size_t flagged_gold_positive = 0;
  std::size_t gold_positive = 0;
  std::size_t exact = 0;  // sentences counted toward accuracy
};

struct EvalResult {
  std::size_t sentences = 0;
  LevelScores detection;
  LevelScores correction;
};

void to_json(nlohmann::json& j, const LevelScores& s);

void to_json(nlohmann::json& j, const EvalResult& r);

class EvalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

double f1_score(double p, double r);

void finish_scores(LevelScores& s, std::size_t n);

/// Detection: a sentence is a hit when its predicted edit positions equal the
/// gold error positions exactly. Correction additionally needs the right
/// characters at those positions.
EvalResult evaluate(const std::vector<std::u32string>& predictions, const std::vector<CscExample>& examples);

struct PostProcessRule {
  std::u32string characters = U"的地得";
  bool enabled = true;
};

/// Reverts every edit whose source or predicted character is in the rule set.
std::u32string post_process(const std::u32string& source, const std::u32string& prediction,
                                   const PostProcessRule& rule = {});

struct GateStats {
  std::optional<std::array<double, 3>> error_mean;
  std::optional<std::array<double, 3>> clean_mean;
  std::size_t error_positions = 0;
  std::size_t clean_positions = 0;
};

/// Mean gates over gold error positions and over clean positions.
GateStats gate_stats(const std::vector<GateTrace>& traces, const std::vector<CscExample>& examples);

/// JSON lines: {"sentence", "target", "gates": [[t,a,v]...], "errors": [bool...]}.
void emit_trace_report(const std::vector<GateTrace>& traces, const std::vector<CscExample>& examples,
                              const std::string& path);

/// Percentages in the usual detection | correction column order.
std::string format_table(const EvalResult& r, const std::string& label = "model");

}  // namespace realise
