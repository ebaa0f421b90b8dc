// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "realise/corpus.hpp"
#include "realise/glyph.hpp"
#include "realise/pinyin.hpp"

// A small synthetic language for end-to-end runs.
//
// Filler characters are arranged in `classes` slot classes of `fillers`
// members. Filler (c, j) is a homophone of (c ^ 1, j) and shares a glyph
// family with (c ^ 2, fillers - 1 - j). Sentences come from fixed templates of
// function characters with class-typed slots. Every slot follows a cue
// character of its class, so context reveals which class belongs in a slot
// but never which member: recovering the member from a corrupted slot needs
// the pronunciation or the shape of the wrong character.
namespace realise {

struct ToyWorldConfig {
  std::size_t classes = 4;  // must be a multiple of 4
  std::size_t fillers = 8;
  std::size_t function_chars = 268;
  std::size_t cues_per_class = 2;
  std::size_t templates = 40;
  std::size_t min_len = 8;
  std::size_t max_len = 12;
  std::size_t slots = 3;
  std::size_t train_size = 500;
  std::size_t test_size = 100;
  double rate = 0.15;
  bool injective_pinyin = false;
  double flip_fraction = 0.10;
  std::uint64_t seed = 7;
};

struct ToyWorld {
  ToyWorldConfig config;
  Vocabulary vocab;
  PinyinTable pinyin;
  ConfusionSpec confusion;
  GlyphAtlas atlas;
  std::vector<std::u32string> train_clean;
  std::vector<std::u32string> test_clean;
  std::vector<CscExample> train;
  std::vector<CscExample> test;
  std::vector<char32_t> filler_chars;    // index c * fillers + j
  std::vector<char32_t> function_chars;

  char32_t filler(std::size_t c, std::size_t j) const { return filler_chars.at(c * config.fillers + j); }
};

namespace toy_detail {

// Fixed characters so that familiar examples exist in the toy language.
inline constexpr char32_t kAnchorFillers[] = {U'很', U'跟'};  // (0,0) and (1,0): homophones
inline constexpr char32_t kAnchorFunctions[] = {U'我', U'快', U'去', U'的', U'地', U'得'};

inline std::vector<std::string> syllables() {
  static const char* initials[] = {"b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h",
                                   "j", "q", "x", "zh", "ch", "sh", "r", "z", "c", "s"};
  static const char* finals[] = {"a", "o", "e", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong", "i", "u"};
  std::vector<std::string> out;
  for (int tone = 1; tone <= 4; ++tone)
    for (const char* f : finals)
      for (const char* i : initials) {
        std::string s = std::string(i) + f + std::to_string(tone);
        if (s != "hen3") out.push_back(s);
      }
  return out;
}

}  // namespace toy_detail

ToyWorld build_toy_world(const ToyWorldConfig& config);

}  // namespace realise
