// SPDX-License-Identifier: Apache-2.0
// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "realise/toy.hpp"
#include "realise/train.hpp"
#include "support/properties.hpp"

using namespace realise;
using namespace realise::oracle;
namespace fs = std::filesystem;

namespace {

constexpr double kGradientBudgetSeconds = 120.0;
constexpr double kPretrainAccuracy = 0.99;
constexpr double kPretrainBudgetSeconds = 600.0;
constexpr std::size_t kPretrainEpochs = 60;
constexpr double kPretrainLr = 2e-3;
constexpr double kEndToEndF1 = 0.80;
constexpr double kEndToEndBudgetSeconds = 1800.0;
constexpr std::size_t kFinetuneEpochs = 60;
constexpr double kFinetuneDropout = 0.3;
constexpr std::size_t kFusionInputs = 100;
constexpr std::size_t kMetricCorpora = 20;
constexpr std::size_t kPostProcessCases = 50;

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << x;
  return os.str();
}

Resources resources(const ToyWorld& w) { return {w.vocab, w.pinyin, w.atlas, w.train, w.test, {}}; }

TrainConfig pipeline_config(const std::string& dir) {
  TrainConfig c;
  c.checkpoint_dir = dir;
  c.verbose = false;
  return c;
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t runs = 0;
  for (const auto& c : gradient_cases()) {
    for (int k = 0; k < kConfigsPerLayer; ++k) {
      const auto r = c.run(1000 + 17 * k);
      ++runs;
      if (r.worst > worst) {
        worst = r.worst;
        where = c.name + "/" + r.worst_name;
      }
    }
  }
  const double t = seconds_since(t0);
  return {worst <= kGradTolerance && t < kGradientBudgetSeconds,
          std::to_string(runs) + " checks, worst relative error " + fmt(worst) + " (" + where + "), " + fmt(t, 3) +
              " s"};
}

Outcome shapes() {
  const auto err = shape_suite();
  return {err.empty(), err.empty() ? "graphic 32>16>8>4>2>1, encoders and fusion N x d, rows sum to 1" : err};
}

Outcome fusion() {
  const auto r = fusion_oracle(kFusionInputs);
  return {r.max_error <= kFusionTolerance && r.forced_exact && r.inputs == kFusionInputs,
          std::to_string(r.inputs) + " inputs, max error " + fmt(r.max_error) +
              (r.forced_exact ? ", gates (1,0,0) reproduce the textual input exactly" : ", forced gates NOT exact")};
}

Outcome pretraining(const std::string& work) {
  ToyWorldConfig wc;
  wc.injective_pinyin = true;
  const auto w = build_toy_world(wc);
  const auto res = resources(w);
  auto cfg = pipeline_config(work + "/pretrain");
  cfg.epochs = kPretrainEpochs;
  cfg.peak_lr = kPretrainLr;
  const auto acoustic = pretrain_acoustic(cfg, res);
  const auto visual = pretrain_visual(cfg, res);
  const double rec = acoustic.final_metrics["clean_recovery"].get<double>();
  const double acc = visual.final_metrics["accuracy"].get<double>();
  const bool pass = rec >= kPretrainAccuracy && acc >= kPretrainAccuracy &&
                    acoustic.wall_clock_seconds < kPretrainBudgetSeconds &&
                    visual.wall_clock_seconds < kPretrainBudgetSeconds;
  return {pass, std::to_string(w.vocab.num_chars()) + " characters; acoustic recovery " + fmt(rec) + " in " +
                    fmt(acoustic.wall_clock_seconds, 3) + " s, visual accuracy " + fmt(acc) + " in " +
                    fmt(visual.wall_clock_seconds, 3) + " s"};
}

struct PipelineResult {
  double full_f1 = 0.0;
  std::vector<double> ablation_f1;
  double seconds = 0.0;
  std::string example;
};

// Both pretrainings, then fine-tuning of the full model and the requested
// ablations, all from the same seed.
PipelineResult run_pipeline(const ToyWorld& w, const std::string& dir, bool ablations) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = resources(w);
  auto cfg = pipeline_config(dir);
  pretrain_visual(cfg, res);
  pretrain_acoustic(cfg, res);
  PipelineResult out;
  std::vector<std::pair<std::string, std::function<void(TrainConfig&)>>> variants = {{"full", [](TrainConfig&) {}}};
  if (ablations) {
    variants.emplace_back("no_phonetic", [](TrainConfig& c) { c.no_phonetic = true; });
    variants.emplace_back("no_graphic", [](TrainConfig& c) { c.no_graphic = true; });
  }
  for (const auto& [name, tweak] : variants) {
    auto c = cfg;
    c.checkpoint_dir = dir + "/" + name;
    c.acoustic_checkpoint = cfg.acoustic_path();
    c.visual_checkpoint = cfg.visual_path();
    c.epochs = kFinetuneEpochs;
    c.dropout = kFinetuneDropout;
    tweak(c);
    const auto report = finetune(c, res);
    const double f1 = report.final_metrics["correction"]["f1"].get<double>();
    std::ofstream(c.checkpoint_dir + "/metrics.json") << report.final_metrics.dump(2) << "\n";
    if (name == "full") {
      out.full_f1 = f1;
      const auto model = load_model(report.checkpoint);
      InputBuilder builder(w.vocab, w.pinyin, w.atlas);
      out.example = utf8_encode(correct_sentence(model, builder, w.vocab, U"我跟快去").text);
    } else {
      out.ablation_f1.push_back(f1);
    }
  }
  out.seconds = seconds_since(t0);
  return out;
}

Outcome end_to_end(const std::string& work, PipelineResult& kept) {
  const auto w = build_toy_world(ToyWorldConfig{});
  kept = run_pipeline(w, work + "/run1", true);
  const bool lower = kept.ablation_f1.size() == 2 && kept.ablation_f1[0] < kept.full_f1 &&
                     kept.ablation_f1[1] < kept.full_f1;
  const bool pass = kept.full_f1 >= kEndToEndF1 && lower && kept.seconds < kEndToEndBudgetSeconds;
  std::string detail = "test correction F1 full " + fmt(kept.full_f1);
  if (kept.ablation_f1.size() == 2) {
    detail += ", without phonetic " + fmt(kept.ablation_f1[0]) + ", without graphic " + fmt(kept.ablation_f1[1]);
  }
  detail += "; 我跟快去 -> " + kept.example + "; " + fmt(kept.seconds, 4) + " s";
  return {pass, detail};
}

Outcome metrics() {
  const auto err = metric_oracle(kMetricCorpora);
  return {err.empty(), err.empty() ? std::to_string(kMetricCorpora) + " random corpora match the hand enumeration"
                                   : err};
}

Outcome post_processing() {
  const auto fixture = post_process_fixture(kPostProcessCases);
  const auto err = post_process_check(fixture);
  return {err.empty(), err.empty() ? std::to_string(fixture.size()) + " cases idempotent, only edits reverted" : err};
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Outcome determinism(const std::string& work) {
  const auto w = build_toy_world(ToyWorldConfig{});
  const std::string a = work + "/run1", b = work + "/run2";
  if (!fs::exists(a + "/full/best.bin")) run_pipeline(w, a, false);
  run_pipeline(w, b, false);
  std::size_t compared = 0;
  std::vector<std::string> differ;
  for (const auto& entry : fs::recursive_directory_iterator(b)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), b);
    const auto ext = rel.extension().string();
    if (ext != ".bin" && ext != ".json") continue;
    ++compared;
    if (file_bytes(entry.path()) != file_bytes(fs::path(a) / rel)) differ.push_back(rel.string());
  }
  std::string detail = std::to_string(compared) + " checkpoint and metric files compared";
  for (const auto& d : differ) detail += "; differs: " + d;
  return {differ.empty() && compared > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = (fs::temp_directory_path() / "realise_acceptance").string();
  std::set<int> only;
  app.add_option("--work", work, "scratch directory for checkpoints");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(work);
  fs::create_directories(work);

  PipelineResult kept;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradients},
      {"shape suite", shapes},
      {"fusion oracle", fusion},
      {"pretraining convergence", [&] { return pretraining(work); }},
      {"end-to-end toy correction", [&] { return end_to_end(work, kept); }},
      {"metric oracle", metrics},
      {"post-processing", post_processing},
      {"determinism", [&] { return determinism(work); }},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all &= o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return all ? 0 : 1;
}
