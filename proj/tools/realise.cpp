// SPDX-License-Identifier: Apache-2.0
// Command-line front end: data generation, pretraining, training, correction,
// evaluation and gate tracing.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "realise/corpus.hpp"
#include "realise/eval.hpp"
#include "realise/glyph.hpp"
#include "realise/model.hpp"
#include "realise/pinyin.hpp"
#include "realise/toy.hpp"
#include "realise/train.hpp"

namespace {

using namespace realise;

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Binds every TrainConfig field to a flag of the same name. Only flags given
// on the command line override the --config base.
class TrainFlags {
 public:
  void attach(CLI::App& app) {
    app.add_option("--config", config_path_, "JSON file with TrainConfig fields; flags override it");
    option(app, "--epochs", flags_.epochs, "training epochs (>= 1)", &TrainConfig::epochs);
    option(app, "--batch_size", flags_.batch_size, "sentences (or glyphs) per step", &TrainConfig::batch_size);
    option(app, "--peak_lr", flags_.peak_lr, "peak learning rate", &TrainConfig::peak_lr);
    option(app, "--warmup_fraction", flags_.warmup_fraction, "fraction of steps spent warming up",
           &TrainConfig::warmup_fraction);
    option(app, "--weight_decay", flags_.weight_decay, "decoupled weight decay", &TrainConfig::weight_decay);
    option(app, "--seed", flags_.seed, "random seed", &TrainConfig::seed);
    option(app, "--max_len", flags_.max_len, "padded length including [CLS]/[SEP]", &TrainConfig::max_len);
    option(app, "--dropout", flags_.dropout, "dropout in transformer sublayers", &TrainConfig::dropout);
    option(app, "--dev_fraction", flags_.dev_fraction, "share of the training corpus held out for selection",
           &TrainConfig::dev_fraction);
    option(app, "--hidden", flags_.hidden, "model width d", &TrainConfig::hidden);
    option(app, "--heads", flags_.heads, "attention heads", &TrainConfig::heads);
    option(app, "--ffn", flags_.ffn, "feed-forward width", &TrainConfig::ffn);
    option(app, "--semantic_layers", flags_.semantic_layers, "semantic encoder layers",
           &TrainConfig::semantic_layers);
    option(app, "--phonetic_layers", flags_.phonetic_layers, "sentence-level phonetic layers",
           &TrainConfig::phonetic_layers);
    option(app, "--fusion_layers", flags_.fusion_layers, "layers after fusion", &TrainConfig::fusion_layers);
    option(app, "--pinyin_embed", flags_.pinyin_embed, "pinyin symbol embedding size", &TrainConfig::pinyin_embed);
    flag(app, "--no_phonetic", flags_.no_phonetic, "drop the phonetic encoder", &TrainConfig::no_phonetic);
    flag(app, "--no_graphic", flags_.no_graphic, "drop the graphic encoder", &TrainConfig::no_graphic);
    flag(app, "--single_font", flags_.single_font, "use only the first font channel", &TrainConfig::single_font);
    flag(app, "--no_pretraining", flags_.no_pretraining, "start encoders from random weights",
         &TrainConfig::no_pretraining);
    flag(app, "--no_selective_fusion", flags_.no_selective_fusion, "sum modalities with gates pinned to 1",
         &TrainConfig::no_selective_fusion);
    option(app, "--train_corpus", flags_.train_corpus, "training corpus (.tsv or .jsonl)", &TrainConfig::train_corpus);
    option(app, "--eval_corpus", flags_.eval_corpus, "corpus scored after training", &TrainConfig::eval_corpus);
    option(app, "--vocab", flags_.vocab, "vocabulary file (default: built from the training corpus)",
           &TrainConfig::vocab);
    option(app, "--pinyin_table", flags_.pinyin_table, "char<TAB>pinyin table", &TrainConfig::pinyin_table);
    option(app, "--atlas", flags_.atlas, "glyph atlas file", &TrainConfig::atlas);
    option(app, "--checkpoint_dir", flags_.checkpoint_dir, "output directory for checkpoints",
           &TrainConfig::checkpoint_dir);
    option(app, "--acoustic_checkpoint", flags_.acoustic_checkpoint, "phonetic pretraining checkpoint",
           &TrainConfig::acoustic_checkpoint);
    option(app, "--visual_checkpoint", flags_.visual_checkpoint, "graphic pretraining checkpoint",
           &TrainConfig::visual_checkpoint);
    option(app, "--resume", flags_.resume, "resume fine-tuning from a last.bin checkpoint", &TrainConfig::resume);
    option(app, "--stop_after", flags_.stop_after, "stop fine-tuning after this many epochs (0 = all)",
           &TrainConfig::stop_after);
    flag(app, "--verbose,!--quiet", flags_.verbose, "per-epoch log lines on stderr", &TrainConfig::verbose);
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_path_.empty()) {
      std::ifstream is(config_path_);
      if (!is) throw IoError("cannot read config " + config_path_);
      try {
        cfg = nlohmann::json::parse(is).get<TrainConfig>();
      } catch (const nlohmann::json::exception& e) {
        throw UsageError("bad config " + config_path_ + ": " + e.what());
      }
    }
    for (const auto& [opt, copy] : overrides_)
      if (opt->count() > 0) copy(cfg, flags_);
    const auto problems = cfg.validate();
    if (!problems.empty()) throw UsageError("invalid configuration: " + problems.front());
    return cfg;
  }

 private:
  template <typename V>
  void option(CLI::App& app, const std::string& name, V& target, const std::string& help, V TrainConfig::*field) {
    auto* opt = app.add_option(name, target, help)->capture_default_str();
    overrides_.emplace_back(opt, [field](TrainConfig& dst, const TrainConfig& src) { dst.*field = src.*field; });
  }

  void flag(CLI::App& app, const std::string& name, bool& target, const std::string& help, bool TrainConfig::*field) {
    auto* opt = app.add_flag(name, target, help);
    overrides_.emplace_back(opt, [field](TrainConfig& dst, const TrainConfig& src) { dst.*field = src.*field; });
  }

  std::string config_path_;
  TrainConfig flags_;
  std::vector<std::pair<CLI::Option*, std::function<void(TrainConfig&, const TrainConfig&)>>> overrides_;
};

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << j.dump(2) << "\n";
}

std::vector<std::string> read_lines(std::istream& is) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> read_lines(const std::string& path) {
  if (path.empty() || path == "-") return read_lines(std::cin);
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  return read_lines(is);
}

std::string absolute(const std::string& p) { return p.empty() ? p : std::filesystem::absolute(p).string(); }

void absolutize(TrainConfig& cfg) {
  for (auto* p : {&cfg.train_corpus, &cfg.eval_corpus, &cfg.vocab, &cfg.pinyin_table, &cfg.atlas}) *p = absolute(*p);
}

/// Model plus the vocabulary, pinyin table and atlas recorded at training time
/// (explicit flags take precedence).
struct LoadedModel {
  Realise<float> model;
  Resources res;
  std::unique_ptr<InputBuilder> builder;
};

LoadedModel load_for_inference(const std::string& ckpt, const std::string& vocab, const std::string& pinyin,
                               const std::string& atlas) {
  auto model = load_model(ckpt);
  const auto meta = nn::load_checkpoint_meta(ckpt);
  TrainConfig cfg = meta.contains("train") ? meta.at("train").get<TrainConfig>() : TrainConfig{};
  if (!vocab.empty()) cfg.vocab = vocab;
  if (!pinyin.empty()) cfg.pinyin_table = pinyin;
  if (!atlas.empty()) cfg.atlas = atlas;
  cfg.eval_corpus.clear();
  LoadedModel out{std::move(model), load_resources(cfg, false), nullptr};
  if (out.res.vocab.size() != out.model.config().vocab_size) {
    throw nn::CheckpointError("vocabulary size " + std::to_string(out.res.vocab.size()) +
                              " does not match checkpoint " + std::to_string(out.model.config().vocab_size));
  }
  out.builder = std::make_unique<InputBuilder>(out.res.vocab, out.res.pinyin, out.res.atlas,
                                               out.model.config().single_font);
  return out;
}

int run_training(const std::string& command, const TrainFlags& flags, const std::string& report_path) {
  TrainConfig cfg = flags.resolve();
  absolutize(cfg);
  const bool visual = command == "pretrain-visual";
  const auto res = load_resources(cfg, !visual);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
  TrainReport report = command == "pretrain-acoustic" ? pretrain_acoustic(cfg, res)
                       : visual                       ? pretrain_visual(cfg, res)
                                                      : finetune(cfg, res);
  const std::string out = report_path.empty()
                              ? (std::filesystem::path(cfg.checkpoint_dir) / (command + "-report.json")).string()
                              : report_path;
  write_json(out, report);
  std::cout << command << " done: checkpoint " << report.checkpoint << ", report " << out << "\n";
  if (!report.final_metrics.empty()) std::cout << report.final_metrics.dump() << "\n";
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Multimodal Chinese spelling correction: pretraining, training, correction and evaluation."};
  app.name("realise");
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic toy corpus, pinyin table, confusion spec and atlas");
  ToyWorldConfig world;
  std::string gen_out = "data";
  gen->add_option("--out", gen_out, "output directory")->capture_default_str();
  gen->add_option("--seed", world.seed, "generator seed")->capture_default_str();
  gen->add_option("--train_size", world.train_size, "training pairs")->capture_default_str();
  gen->add_option("--test_size", world.test_size, "test pairs")->capture_default_str();
  gen->add_option("--rate", world.rate, "substitution rate")->capture_default_str();
  gen->add_option("--classes", world.classes, "slot classes (multiple of 4)")->capture_default_str();
  gen->add_option("--fillers", world.fillers, "characters per slot class")->capture_default_str();
  gen->add_option("--function_chars", world.function_chars, "template characters")->capture_default_str();
  gen->add_option("--cues_per_class", world.cues_per_class, "cue characters per slot class")->capture_default_str();
  gen->add_option("--slots", world.slots, "slots per template")->capture_default_str();
  gen->add_option("--templates", world.templates, "sentence templates")->capture_default_str();
  gen->add_option("--flip_fraction", world.flip_fraction, "pixels flipped per glyph-family member")
      ->capture_default_str();
  gen->add_flag("--injective_pinyin", world.injective_pinyin, "give every character its own syllable");

  // training commands
  std::vector<std::unique_ptr<TrainFlags>> train_flags;
  std::vector<std::pair<CLI::App*, std::string>> trainers;
  std::string report_path;
  for (const auto& [name, help] : {std::pair{"pretrain-acoustic", "input-method pretraining of the phonetic encoder"},
                                   std::pair{"pretrain-visual", "OCR pretraining of the graphic encoder"},
                                   std::pair{"train", "fine-tune the full correction model"}}) {
    auto* sub = app.add_subcommand(name, help);
    train_flags.push_back(std::make_unique<TrainFlags>());
    train_flags.back()->attach(*sub);
    sub->add_option("--report", report_path, "TrainReport JSON path (default <checkpoint_dir>/<command>-report.json)");
    trainers.emplace_back(sub, name);
  }

  // correct
  auto* correct = app.add_subcommand("correct", "correct sentences, one per line");
  std::string ckpt, vocab_path, pinyin_path, atlas_path, input_path, output_path, trace_path;
  correct->add_option("--ckpt", ckpt, "fine-tuned checkpoint")->required();
  correct->add_option("--input", input_path, "input file (default stdin)");
  correct->add_option("--output", output_path, "output file (default stdout)");
  correct->add_option("--trace", trace_path, "also write per-character gates as JSON lines");
  for (auto* sub : {correct}) {
    sub->add_option("--vocab", vocab_path, "vocabulary (default: recorded in the checkpoint)");
    sub->add_option("--pinyin_table", pinyin_path, "pinyin table (default: recorded in the checkpoint)");
    sub->add_option("--atlas", atlas_path, "glyph atlas (default: recorded in the checkpoint)");
  }

  // eval
  auto* eval = app.add_subcommand("eval", "sentence-level detection and correction metrics");
  std::string pred_path, gold_path, json_path = "metrics.json", label = "model";
  bool post = false;
  eval->add_option("--gold", gold_path, "gold corpus (.tsv or .jsonl)")->required();
  eval->add_option("--pred", pred_path, "predictions, one sentence per line");
  eval->add_option("--ckpt", ckpt, "predict with this checkpoint instead of reading --pred");
  eval->add_option("--vocab", vocab_path, "vocabulary (with --ckpt)");
  eval->add_option("--pinyin_table", pinyin_path, "pinyin table (with --ckpt)");
  eval->add_option("--atlas", atlas_path, "glyph atlas (with --ckpt)");
  eval->add_option("--json", json_path, "metrics JSON output")->capture_default_str();
  eval->add_option("--label", label, "row label in the printed table")->capture_default_str();
  eval->add_flag("--post-process,--post_process", post, "revert edits involving 的/地/得");

  // trace-gates
  auto* trace = app.add_subcommand("trace-gates", "gate values per character, with error/clean averages");
  std::string trace_out = "gates.jsonl";
  trace->add_option("--ckpt", ckpt, "fine-tuned checkpoint")->required();
  trace->add_option("--gold", gold_path, "corpus to trace")->required();
  trace->add_option("--out", trace_out, "JSON lines output")->capture_default_str();
  trace->add_option("--vocab", vocab_path, "vocabulary (default: recorded in the checkpoint)");
  trace->add_option("--pinyin_table", pinyin_path, "pinyin table (default: recorded in the checkpoint)");
  trace->add_option("--atlas", atlas_path, "glyph atlas (default: recorded in the checkpoint)");

  if (argc <= 1) {
    std::cerr << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  }

  if (gen->parsed()) {
    const auto w = build_toy_world(world);
    std::filesystem::create_directories(gen_out);
    const auto at = [&](const char* f) { return (std::filesystem::path(gen_out) / f).string(); };
    w.vocab.save(at("vocab.txt"));
    w.pinyin.save(at("pinyin.tsv"));
    w.confusion.save(at("confusion.json"));
    w.atlas.save(at("atlas.bin"));
    save_corpus(at("train.tsv"), w.train, CorpusFormat::kTsv);
    save_corpus(at("test.tsv"), w.test, CorpusFormat::kTsv);
    std::cout << "wrote " << w.vocab.num_chars() << " characters, " << w.train.size() << " train and "
              << w.test.size() << " test pairs to " << gen_out << "\n";
    return 0;
  }
  for (std::size_t k = 0; k < trainers.size(); ++k) {
    if (trainers[k].first->parsed()) return run_training(trainers[k].second, *train_flags[k], report_path);
  }
  if (correct->parsed()) {
    auto loaded = load_for_inference(ckpt, vocab_path, pinyin_path, atlas_path);
    std::vector<std::u32string> sentences;
    for (const auto& line : read_lines(input_path)) sentences.push_back(utf8_decode(line));
    const auto out = correct_sentences(loaded.model, *loaded.builder, loaded.res.vocab, sentences);
    std::ofstream file;
    if (!output_path.empty()) {
      file.open(output_path);
      if (!file) throw IoError("cannot write " + output_path);
    }
    std::ostream& os = output_path.empty() ? std::cout : file;
    for (const auto& c : out) os << utf8_encode(c.text) << "\n";
    if (!trace_path.empty()) {
      std::vector<GateTrace> traces;
      std::vector<CscExample> examples;
      for (std::size_t i = 0; i < out.size(); ++i) {
        traces.push_back(out[i].trace);
        examples.push_back({sentences[i], out[i].text});
      }
      emit_trace_report(traces, examples, trace_path);
    }
    return 0;
  }
  if (eval->parsed()) {
    const auto gold = load_corpus(gold_path);
    for (const auto& d : gold.diagnostics) std::cerr << "warning: " << d << "\n";
    std::vector<std::u32string> preds;
    if (!pred_path.empty()) {
      for (const auto& line : read_lines(pred_path)) preds.push_back(utf8_decode(line));
    } else if (!ckpt.empty()) {
      auto loaded = load_for_inference(ckpt, vocab_path, pinyin_path, atlas_path);
      for (auto& c : predict_corpus(loaded.model, *loaded.builder, loaded.res.vocab, gold.examples)) {
        preds.push_back(std::move(c.text));
      }
    } else {
      throw UsageError("eval needs --pred or --ckpt");
    }
    if (preds.size() != gold.examples.size()) {
      throw UsageError(std::to_string(preds.size()) + " predictions for " + std::to_string(gold.examples.size()) +
                       " gold sentences");
    }
    if (post) {
      for (std::size_t i = 0; i < preds.size(); ++i) preds[i] = post_process(gold.examples[i].source, preds[i]);
    }
    const auto result = evaluate(preds, gold.examples);
    std::cout << format_table(result, label);
    write_json(json_path, result);
    return 0;
  }
  if (trace->parsed()) {
    auto loaded = load_for_inference(ckpt, vocab_path, pinyin_path, atlas_path);
    const auto gold = load_corpus(gold_path);
    std::vector<GateTrace> traces;
    for (auto& c : predict_corpus(loaded.model, *loaded.builder, loaded.res.vocab, gold.examples)) {
      traces.push_back(std::move(c.trace));
    }
    emit_trace_report(traces, gold.examples, trace_out);
    const auto st = gate_stats(traces, gold.examples);
    auto row = [](const char* name, const std::optional<std::array<double, 3>>& m, std::size_t n) {
      std::cout << name << " (" << n << " positions): ";
      if (!m) {
        std::cout << "absent\n";
        return;
      }
      char buf[96];
      std::snprintf(buf, sizeof buf, "textual %.3f acoustic %.3f visual %.3f\n", (*m)[0], (*m)[1], (*m)[2]);
      std::cout << buf;
    };
    row("erroneous", st.error_mean, st.error_positions);
    row("clean", st.clean_mean, st.clean_positions);
    return 0;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const realise::TrainingDiverged& e) {
    std::cerr << "error: diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const realise::IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return kExitIo;
  } catch (const realise::AtlasError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return kExitIo;
  } catch (const realise::nn::CheckpointError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return kExitIo;
  } catch (const realise::CorpusError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
