// SPDX-License-Identifier: Apache-2.0
#include "realise/train.hpp"

namespace realise {

void to_json(nlohmann::json& j, const TrainReport& r) {
  j = {{"kind", r.kind},
       {"epoch_loss", r.epoch_loss},
       {"dev_metric", r.dev_metric},
       {"initial_loss", r.initial_loss},
       {"skipped_steps", r.skipped_steps},
       {"final_metrics", r.final_metrics},
       {"wall_clock_seconds", r.wall_clock_seconds},
       {"config", r.config},
       {"checkpoint", r.checkpoint},
       {"warnings", r.warnings}};
}

Resources load_resources(const TrainConfig& cfg, bool need_corpus) {
  Resources r;
  if (need_corpus || cfg.vocab.empty()) {
    if (cfg.train_corpus.empty()) throw std::invalid_argument("train_corpus is required");
    auto loaded = load_corpus(cfg.train_corpus);
    r.train = std::move(loaded.examples);
    r.warnings = std::move(loaded.diagnostics);
  }
  if (!cfg.vocab.empty()) {
    r.vocab = Vocabulary::load(cfg.vocab);
  } else {
    for (const auto& ex : r.train) {
      for (char32_t c : ex.source) r.vocab.add(c);
      for (char32_t c : ex.target) r.vocab.add(c);
    }
  }
  if (!cfg.pinyin_table.empty()) r.pinyin = PinyinTable::load(cfg.pinyin_table);
  if (!cfg.atlas.empty()) r.atlas = GlyphAtlas::load(cfg.atlas);
  if (!cfg.eval_corpus.empty()) {
    auto loaded = load_corpus(cfg.eval_corpus);
    r.eval = std::move(loaded.examples);
    for (auto& d : loaded.diagnostics) r.warnings.push_back(std::move(d));
  }
  return r;
}

TrainReport pretrain_acoustic(const TrainConfig& cfg, const Resources& res) {
  using namespace train_detail;
  using T = float;
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.kind = "pretrain-acoustic";
  report.config = cfg;
  auto [train, dev] = split(res.train, cfg.dev_fraction, cfg.seed);
  if (train.empty()) throw std::invalid_argument("pretrain-acoustic: empty training split");
  const auto mcfg = cfg.model(res.vocab.size());
  Realise<T> model(mcfg, cfg.seed);
  InputBuilder builder(res.vocab, res.pinyin, res.atlas, cfg.single_font);
  const std::size_t per_epoch = steps_per_epoch(train.size(), cfg.batch_size);
  nn::AdamW<T> opt(model.acoustic_parameters(), nn::AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay},
                   schedule(cfg, per_epoch));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(train.size(), cfg.seed, epoch);
    double sum = 0.0;
    for (std::size_t s = 0; s < per_epoch; ++s) {
      const Batch b = make_batch(slice(train, order, s * cfg.batch_size, cfg.batch_size), res.vocab, cfg.max_len);
      const auto in = builder.build<T>(b);
      const auto tgt = trimmed_targets(b, in.len);
      nn::Rng drop(cfg.seed * 1000003ULL + opt.step_count());
      auto loss = nn::cross_entropy(model.acoustic_logits(in, ForwardContext{true, &drop}), tgt.ids, tgt.active);
      const double value = loss.item();
      check_finite(value, report.kind, opt.step_count());
      if (report.step_loss.empty()) report.initial_loss = value;
      report.step_loss.push_back(value);
      sum += value;
      opt.zero_grad();
      loss.backward();
      const auto outcome = opt.step();
      if (!outcome.applied) report.warnings.push_back(outcome.diagnostic);
    }
    report.epoch_loss.push_back(sum / static_cast<double>(per_epoch));
    const double acc = acoustic_recovery(model, builder, res.vocab, dev.empty() ? train : dev);
    report.dev_metric.push_back(acc);
    log(cfg, report.kind + " epoch " + std::to_string(epoch + 1) + " loss " + fmt(report.epoch_loss.back()) +
                 " recovery " + fmt(acc));
  }
  report.skipped_steps = opt.skipped();
  ensure_dir(cfg.checkpoint_dir);
  report.checkpoint = cfg.acoustic_path();
  nn::save_checkpoint(report.checkpoint, named_tensors(model.acoustic_parameters()),
                      checkpoint_meta<T>(report.kind, mcfg, cfg));
  report.final_metrics["recovery"] = report.dev_metric.back();
  // Clean recovery reads the target sentences' own pinyin, so it measures the
  // input-method mapping without the corrupted positions.
  const auto& held_out = res.eval.empty() ? (dev.empty() ? train : dev) : res.eval;
  std::vector<CscExample> clean;
  for (const auto& ex : held_out) clean.push_back({ex.target, ex.target});
  report.final_metrics["clean_recovery"] = acoustic_recovery(model, builder, res.vocab, clean);
  if (!res.eval.empty()) report.final_metrics["eval_recovery"] = acoustic_recovery(model, builder, res.vocab, res.eval);
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

TrainReport pretrain_visual(const TrainConfig& cfg, const Resources& res) {
  using namespace train_detail;
  using T = float;
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.kind = "pretrain-visual";
  report.config = cfg;
  const auto mcfg = cfg.model(res.vocab.size());
  Realise<T> model(mcfg, cfg.seed);
  InputBuilder builder(res.vocab, res.pinyin, res.atlas, cfg.single_font);
  report.warnings = builder.warnings();
  const std::size_t n = res.vocab.num_chars();
  if (n == 0) throw std::invalid_argument("pretrain-visual: empty vocabulary");
  const std::size_t per_epoch = steps_per_epoch(n, cfg.batch_size);
  nn::AdamW<T> opt(model.visual_parameters(), nn::AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay},
                   schedule(cfg, per_epoch));
  const std::vector<std::uint8_t> active(cfg.batch_size, 1);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(n, cfg.seed, epoch);
    double sum = 0.0;
    for (std::size_t s = 0; s < per_epoch; ++s) {
      std::vector<int> ids;
      for (std::size_t k = s * cfg.batch_size; k < std::min(n, (s + 1) * cfg.batch_size); ++k) {
        ids.push_back(static_cast<int>(order[k] + Vocabulary::kNumSpecial));
      }
      auto loss = nn::cross_entropy(model.visual_logits(builder.images<T>(ids)), ids,
                                    std::span<const std::uint8_t>(active.data(), ids.size()));
      const double value = loss.item();
      check_finite(value, report.kind, opt.step_count());
      if (report.step_loss.empty()) report.initial_loss = value;
      report.step_loss.push_back(value);
      sum += value;
      opt.zero_grad();
      loss.backward();
      const auto outcome = opt.step();
      if (!outcome.applied) report.warnings.push_back(outcome.diagnostic);
    }
    report.epoch_loss.push_back(sum / static_cast<double>(per_epoch));
    const double acc = visual_accuracy(model, builder, res.vocab.size());
    report.dev_metric.push_back(acc);
    log(cfg, report.kind + " epoch " + std::to_string(epoch + 1) + " loss " + fmt(report.epoch_loss.back()) +
                 " accuracy " + fmt(acc));
  }
  report.skipped_steps = opt.skipped();
  ensure_dir(cfg.checkpoint_dir);
  report.checkpoint = cfg.visual_path();
  nn::save_checkpoint(report.checkpoint, named_tensors(model.visual_parameters()),
                      checkpoint_meta<T>(report.kind, mcfg, cfg));
  report.final_metrics["accuracy"] = report.dev_metric.back();
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

Realise<float> load_model(const std::string& path) {
  const auto meta = nn::load_checkpoint_meta(path);
  Realise<float> model(meta.at("model").get<ModelConfig>(), 0);
  const auto stored = nn::load_checkpoint(path);
  for (auto p : model.parameters()) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw nn::CheckpointError(path + ": missing tensor " + p.name);
    nn::assign(p.tensor, it->second, p.name);
  }
  return model;
}

TrainReport finetune(const TrainConfig& cfg, const Resources& res) {
  using namespace train_detail;
  using T = float;
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.kind = "train";
  report.config = cfg;
  auto [train, dev] = split(res.train, cfg.dev_fraction, cfg.seed);
  if (train.empty()) throw std::invalid_argument("train: empty training split");
  const auto mcfg = cfg.model(res.vocab.size());
  Realise<T> model(mcfg, cfg.seed);
  InputBuilder builder(res.vocab, res.pinyin, res.atlas, cfg.single_font);
  report.warnings = builder.warnings();
  if (!cfg.no_pretraining && cfg.resume.empty()) {
    if (mcfg.use_phonetic) model.load(nn::load_checkpoint(cfg.acoustic_path()), "phonetic.");
    if (mcfg.use_graphic) model.load(nn::load_checkpoint(cfg.visual_path()), "graphic.");
  }
  const std::size_t per_epoch = steps_per_epoch(train.size(), cfg.batch_size);
  const auto params = model.parameters();
  nn::AdamW<T> opt(params, nn::AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay}, schedule(cfg, per_epoch));

  std::size_t first_epoch = 0;
  double best_f1 = -1.0;
  ensure_dir(cfg.checkpoint_dir);
  const std::string best_path = join(cfg.checkpoint_dir, "best.bin");
  const std::string last_path = join(cfg.checkpoint_dir, "last.bin");
  if (!cfg.resume.empty()) {
    const auto stored = nn::load_checkpoint(cfg.resume);
    const auto meta = nn::load_checkpoint_meta(cfg.resume);
    std::vector<std::vector<T>> m, v;
    for (auto p : params) {
      auto find = [&](const std::string& name) -> const nn::StoredTensor& {
        auto it = stored.find(name);
        if (it == stored.end()) throw nn::CheckpointError(cfg.resume + ": missing tensor " + name);
        return it->second;
      };
      nn::assign(p.tensor, find(p.name), p.name);
      m.emplace_back(find("adam.m." + p.name).values);
      v.emplace_back(find("adam.v." + p.name).values);
    }
    opt.restore(meta.at("step").get<std::size_t>(), m, v);
    first_epoch = meta.at("epoch").get<std::size_t>();
    best_f1 = meta.at("best_dev_f1").get<double>();
    report.epoch_loss = meta.at("epoch_loss").get<std::vector<double>>();
    report.dev_metric = meta.at("dev_metric").get<std::vector<double>>();
    report.initial_loss = meta.at("initial_loss").get<double>();
  }

  for (std::size_t epoch = first_epoch; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(train.size(), cfg.seed, epoch);
    double sum = 0.0;
    for (std::size_t s = 0; s < per_epoch; ++s) {
      const Batch b = make_batch(slice(train, order, s * cfg.batch_size, cfg.batch_size), res.vocab, cfg.max_len);
      const auto in = builder.build<T>(b);
      const auto tgt = trimmed_targets(b, in.len);
      nn::Rng drop(cfg.seed * 1000003ULL + opt.step_count());
      auto loss = nn::cross_entropy(model.forward(in, ForwardContext{true, &drop}).logits, tgt.ids, tgt.active);
      const double value = loss.item();
      check_finite(value, report.kind, opt.step_count());
      if (opt.step_count() == 0) report.initial_loss = value;
      report.step_loss.push_back(value);
      sum += value;
      opt.zero_grad();
      loss.backward();
      const auto outcome = opt.step();
      if (!outcome.applied) report.warnings.push_back(outcome.diagnostic);
    }
    report.epoch_loss.push_back(sum / static_cast<double>(per_epoch));
    const double f1 = evaluate_model(model, builder, res.vocab, dev.empty() ? train : dev).correction.f1;
    report.dev_metric.push_back(f1);
    log(cfg, "train epoch " + std::to_string(epoch + 1) + " loss " + fmt(report.epoch_loss.back()) + " dev F1 " +
                 fmt(f1));

    auto meta = checkpoint_meta<T>(report.kind, mcfg, cfg);
    if (f1 > best_f1) {
      best_f1 = f1;
      meta["epoch"] = epoch + 1;
      nn::save_checkpoint(best_path, named_tensors(params), meta);
    }
    meta["epoch"] = epoch + 1;
    meta["step"] = opt.step_count();
    meta["best_dev_f1"] = best_f1;
    meta["epoch_loss"] = report.epoch_loss;
    meta["dev_metric"] = report.dev_metric;
    meta["initial_loss"] = report.initial_loss;
    auto tensors = named_tensors(params);
    for (auto& st : opt.state()) tensors.push_back(std::move(st));
    nn::save_checkpoint(last_path, tensors, meta);
    if (cfg.stop_after != 0 && epoch + 1 >= cfg.stop_after) break;
  }
  report.skipped_steps = opt.skipped();
  report.checkpoint = best_path;
  if (!res.eval.empty()) {
    const auto best = load_model(best_path);
    report.final_metrics = evaluate_model(best, builder, res.vocab, res.eval);
  }
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace realise
