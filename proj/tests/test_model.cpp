// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "support/properties.hpp"

using namespace realise;
using namespace realise::oracle;

TEST(Shapes, EncodersFusionAndOutput) { EXPECT_EQ(shape_suite(), ""); }

TEST(Fusion, MatchesLoopReferenceOnRandomInputs) {
  const auto r = fusion_oracle(100);
  EXPECT_EQ(r.inputs, 100u);
  EXPECT_LE(r.max_error, kFusionTolerance);
  EXPECT_TRUE(r.forced_exact);
}

TEST(Fusion, ClosedGatesGiveZero) {
  auto cfg = tiny_model_config(tiny_world().vocab.size());
  Realise<double> model(cfg, 2);
  for (auto& v : model.gate().weight().data()) v = 0.0;
  for (auto& v : model.gate().bias().data()) v = -1000.0;
  std::mt19937_64 rng(3);
  auto h = random_tensor({4, cfg.hidden}, rng, 1.0, false);
  const std::vector<std::uint8_t> mask(4, 1);
  const auto f = model.fuse(h, h, h, mask, 1, 4);
  for (double v : f.mixed.data()) EXPECT_EQ(v, 0.0);
}

TEST(Fusion, NonSelectiveIsPlainSum) {
  auto cfg = tiny_model_config(tiny_world().vocab.size());
  cfg.selective_fusion = false;
  Realise<double> model(cfg, 2);
  std::mt19937_64 rng(4);
  auto a = random_tensor({3, cfg.hidden}, rng, 1.0, false);
  auto b = random_tensor({3, cfg.hidden}, rng, 1.0, false);
  auto c = random_tensor({3, cfg.hidden}, rng, 1.0, false);
  const auto f = model.fuse(a, b, c, std::vector<std::uint8_t>(3, 1), 1, 3);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(f.mixed.data()[i], a.data()[i] + b.data()[i] + c.data()[i]);
  for (double g : f.gates.data()) EXPECT_EQ(g, 1.0);
  for (const auto& p : model.parameters()) EXPECT_EQ(p.name.rfind("fusion.gate", 0), std::string::npos);
}

TEST(Fusion, RejectsMismatchedShapes) {
  auto cfg = tiny_model_config(tiny_world().vocab.size());
  Realise<double> model(cfg, 2);
  const auto a = Tensor<double>::zeros({3, cfg.hidden});
  const auto b = Tensor<double>::zeros({2, cfg.hidden});
  EXPECT_THROW(model.fuse(a, a, b, std::vector<std::uint8_t>(3, 1), 1, 3), nn::ShapeError);
}

TEST(Predict, OutputProjectionIsTiedToTokenEmbedding) {
  auto cfg = tiny_model_config(tiny_world().vocab.size());
  Realise<double> model(cfg, 7);
  std::mt19937_64 rng(5);
  auto mixed = random_tensor({5, cfg.hidden}, rng, 1.0, false);
  const std::vector<std::uint8_t> mask(5, 1);
  const std::size_t v = cfg.vocab_size, k1 = 6, k2 = 9, m = 3;
  const auto before = model.predict(mixed, mask, 1, 5, {});
  auto& emb = model.semantic().token_embedding();
  emb.data()[k1 * cfg.hidden + m] += 0.5;
  emb.data()[k2 * cfg.hidden + m] += 0.5;
  const auto after = model.predict(mixed, mask, 1, 5, {});
  for (std::size_t r = 0; r < 5; ++r) {
    const double d1 = after.at(r, k1) - before.at(r, k1);
    const double d2 = after.at(r, k2) - before.at(r, k2);
    EXPECT_NE(d1, 0.0);
    EXPECT_NEAR(d1, d2, 1e-12);
    for (std::size_t j = 0; j < v; ++j) {
      if (j == k1 || j == k2) continue;
      EXPECT_EQ(after.at(r, j), before.at(r, j));
    }
  }
}

TEST(Predict, UntrainedModelGivesFiniteLogits) {
  const auto& w = tiny_world();
  Realise<double> model(tiny_model_config(w.vocab.size()), 1);
  InputBuilder builder(w.vocab, w.pinyin, w.atlas);
  const auto out = model.forward(builder.build<double>(make_batch(w.test, w.vocab, 8)), {});
  for (double x : out.logits.data()) EXPECT_TRUE(std::isfinite(x));
  for (double g : out.gates.data()) {
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 1.0);
  }
}

TEST(Model, DisabledModalitiesContributeZero) {
  const auto& w = tiny_world();
  auto cfg = tiny_model_config(w.vocab.size());
  cfg.use_phonetic = false;
  cfg.use_graphic = false;
  Realise<double> model(cfg, 1);
  InputBuilder builder(w.vocab, w.pinyin, w.atlas);
  const auto out = model.forward(builder.build<double>(make_batch(w.test, w.vocab, 8)), {});
  for (double x : out.phonetic.data()) EXPECT_EQ(x, 0.0);
  for (double x : out.graphic.data()) EXPECT_EQ(x, 0.0);
  for (const auto& p : model.parameters()) {
    EXPECT_EQ(p.name.rfind("phonetic", 0), std::string::npos) << p.name;
    EXPECT_EQ(p.name.rfind("graphic", 0), std::string::npos) << p.name;
  }
}

TEST(Model, SingleFontUsesOneChannel) {
  const auto& w = tiny_world();
  auto cfg = tiny_model_config(w.vocab.size());
  cfg.single_font = true;
  Realise<double> model(cfg, 1);
  InputBuilder builder(w.vocab, w.pinyin, w.atlas, true);
  const auto in = builder.build<double>(make_batch(w.test, w.vocab, 8));
  EXPECT_EQ(in.images.dim(1), 1u);
  EXPECT_EQ(model.forward(in, {}).graphic.cols(), cfg.hidden);
}

TEST(Model, LoadCopiesPrefixedTensors) {
  auto cfg = tiny_model_config(tiny_world().vocab.size());
  Realise<double> a(cfg, 1), b(cfg, 2);
  nn::TensorMap stored;
  for (const auto& p : a.acoustic_parameters()) {
    stored[p.name] = nn::StoredTensor{p.tensor.shape(), std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())};
  }
  EXPECT_GT(b.load(stored, "phonetic."), 0u);
  const auto pa = a.acoustic_parameters(), pb = b.acoustic_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name.rfind("phonetic.", 0) != 0) continue;
    for (std::size_t k = 0; k < pa[i].tensor.numel(); ++k)
      EXPECT_EQ(static_cast<float>(pb[i].tensor.data()[k]), static_cast<float>(pa[i].tensor.data()[k]));
  }
  EXPECT_THROW(b.load(stored, "graphic."), nn::CheckpointError);
}

TEST(CorrectSentence, PreservesLengthAndPassesUnknownsThrough) {
  const auto& w = tiny_world();
  Realise<double> model(tiny_model_config(w.vocab.size()), 1);
  InputBuilder builder(w.vocab, w.pinyin, w.atlas);
  std::u32string s = w.test[0].source;
  s[0] = U'猫';
  const auto c = correct_sentence(model, builder, w.vocab, s);
  EXPECT_EQ(c.text.size(), s.size());
  EXPECT_EQ(c.text[0], U'猫');
  EXPECT_EQ(c.trace.gates.size(), s.size());
  for (char32_t ch : c.text.substr(1)) EXPECT_TRUE(w.vocab.contains(ch));
  EXPECT_EQ(correct_sentence(model, builder, w.vocab, U"").text, U"");
  const auto many = correct_sentences(model, builder, w.vocab, {w.test[0].source, w.test[1].source, s}, 2);
  EXPECT_EQ(many.size(), 3u);
  EXPECT_EQ(many[2].text, c.text);
}
