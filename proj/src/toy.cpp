// SPDX-License-Identifier: Apache-2.0
#include "realise/toy.hpp"

namespace realise {

ToyWorld build_toy_world(const ToyWorldConfig& config) {
  if (config.classes % 4 != 0 || config.classes == 0) throw std::invalid_argument("toy world: classes must be a positive multiple of 4");
  if (config.fillers == 0 || config.function_chars < std::size(toy_detail::kAnchorFunctions)) {
    throw std::invalid_argument("toy world: too few characters");
  }
  if (config.cues_per_class == 0 ||
      config.function_chars < std::size(toy_detail::kAnchorFunctions) + config.classes * config.cues_per_class) {
    throw std::invalid_argument("toy world: too few function characters for the cues");
  }
  if (config.min_len < 2 * config.slots || config.max_len < config.min_len) {
    throw std::invalid_argument("toy world: template length range cannot hold the slots");
  }
  ToyWorld w;
  w.config = config;

  std::set<char32_t> reserved(std::begin(toy_detail::kAnchorFillers), std::end(toy_detail::kAnchorFillers));
  reserved.insert(std::begin(toy_detail::kAnchorFunctions), std::end(toy_detail::kAnchorFunctions));
  char32_t next = 0x4E00;
  auto fresh = [&] {
    while (reserved.count(next)) ++next;
    return next++;
  };

  const std::size_t nf = config.classes * config.fillers;
  w.filler_chars.resize(nf);
  for (std::size_t k = 0; k < nf; ++k) w.filler_chars[k] = fresh();
  w.filler_chars[0] = toy_detail::kAnchorFillers[0];
  w.filler_chars[config.fillers] = toy_detail::kAnchorFillers[1];
  for (std::size_t k = 0; k < config.function_chars; ++k) {
    w.function_chars.push_back(k < std::size(toy_detail::kAnchorFunctions) ? toy_detail::kAnchorFunctions[k] : fresh());
  }
  for (char32_t c : w.function_chars) w.vocab.add(c);
  for (char32_t c : w.filler_chars) w.vocab.add(c);

  const auto pool = toy_detail::syllables();
  std::size_t used = 0;
  auto take = [&] {
    if (used >= pool.size()) throw std::invalid_argument("toy world: ran out of syllables");
    return pool[used++];
  };
  for (std::size_t c = 0; c < config.classes; ++c) {
    for (std::size_t j = 0; j < config.fillers; ++j) {
      const char32_t ch = w.filler(c, j);
      if (config.injective_pinyin) {
        w.pinyin.insert(ch, (c == 0 && j == 0) ? "hen3" : take());
      } else if (c % 2 == 0) {
        const std::string s = (c == 0 && j == 0) ? std::string("hen3") : take();
        w.pinyin.insert(ch, s);
        w.pinyin.insert(w.filler(c ^ 1, j), s);
      }
    }
  }
  for (char32_t ch : w.function_chars) w.pinyin.insert(ch, take());

  w.confusion.rate = config.rate;
  for (std::size_t c = 0; c < config.classes; ++c) {
    for (std::size_t j = 0; j < config.fillers; ++j) {
      const char32_t ch = w.filler(c, j);
      w.confusion.phonetic[ch] = std::u32string(1, w.filler(c ^ 1, j));
      w.confusion.graphic[ch] = std::u32string(1, w.filler(c ^ 2, config.fillers - 1 - j));
    }
  }
  w.atlas = build_synthetic_atlas(w.vocab, w.confusion, config.seed ^ 0xA71A5ULL, config.flip_fraction);

  // Function index of cue k for class c. 我 is the first cue of class 0;
  // the other cues follow the anchors.
  const std::size_t anchors = std::size(toy_detail::kAnchorFunctions);
  const std::size_t cues = config.classes * config.cues_per_class;
  auto cue = [&](std::size_t c, std::size_t k) -> int {
    const std::size_t flat = c * config.cues_per_class + k;
    return flat == 0 ? 0 : static_cast<int>(anchors + flat - 1);
  };
  std::vector<int> generic;
  for (std::size_t k = 1; k < anchors; ++k) generic.push_back(static_cast<int>(k));
  for (std::size_t k = anchors + cues - 1; k < config.function_chars; ++k) generic.push_back(static_cast<int>(k));

  // Template entries: >= 0 is a function-character index, < 0 encodes slot class -(c+1).
  std::mt19937_64 rng(config.seed);
  std::vector<std::vector<int>> templates;
  templates.push_back({0, -1, 1, 2});  // 我{class 0}快去
  std::uniform_int_distribution<std::size_t> len_dist(config.min_len, config.max_len);
  std::uniform_int_distribution<std::size_t> class_dist(0, config.classes - 1);
  std::uniform_int_distribution<std::size_t> cue_dist(0, config.cues_per_class - 1);
  std::uniform_int_distribution<std::size_t> generic_dist(0, generic.size() - 1);
  while (templates.size() < config.templates) {
    const std::size_t len = len_dist(rng);
    std::vector<std::vector<int>> units;
    for (std::size_t s = 0; s < config.slots; ++s) {
      const std::size_t c = class_dist(rng);
      units.push_back({cue(c, cue_dist(rng)), -static_cast<int>(c) - 1});
    }
    for (std::size_t g = 2 * config.slots; g < len; ++g) units.push_back({generic[generic_dist(rng)]});
    std::shuffle(units.begin(), units.end(), rng);
    std::vector<int> t;
    for (const auto& u : units) t.insert(t.end(), u.begin(), u.end());
    templates.push_back(std::move(t));
  }

  std::uniform_int_distribution<std::size_t> tmpl_dist(0, templates.size() - 1);
  std::uniform_int_distribution<std::size_t> member_dist(0, config.fillers - 1);
  auto sentence = [&] {
    std::u32string s;
    for (int x : templates[tmpl_dist(rng)]) {
      s.push_back(x >= 0 ? w.function_chars[static_cast<std::size_t>(x)]
                         : w.filler(static_cast<std::size_t>(-x - 1), member_dist(rng)));
    }
    return s;
  };
  for (std::size_t i = 0; i < config.train_size; ++i) w.train_clean.push_back(sentence());
  for (std::size_t i = 0; i < config.test_size; ++i) w.test_clean.push_back(sentence());
  w.train = synthesize_corpus(w.train_clean, w.confusion, config.seed + 1);
  w.test = synthesize_corpus(w.test_clean, w.confusion, config.seed + 2);
  return w;
}

}  // namespace realise
