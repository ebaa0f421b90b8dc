// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "realise/utf8.hpp"

namespace realise {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Token <-> id map. Ids 0..4 are the specials; characters follow densely.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecial = 5;

  Vocabulary() : tokens_{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"}, chars_(kNumSpecial, 0) {}

  static Vocabulary from_chars(std::u32string_view chars) {
    Vocabulary v;
    for (char32_t c : chars) v.add(c);
    return v;
  }

  int add(char32_t c) {
    if (auto it = ids_.find(c); it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(utf8_encode(c));
    chars_.push_back(c);
    ids_.emplace(c, id);
    return id;
  }

  int id(char32_t c) const {
    auto it = ids_.find(c);
    return it == ids_.end() ? kUnk : it->second;
  }

  bool contains(char32_t c) const { return ids_.count(c) != 0; }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecial; }

  std::optional<char32_t> character(int id) const {
    if (is_special(id) || id < 0 || static_cast<std::size_t>(id) >= chars_.size()) return std::nullopt;
    return chars_[static_cast<std::size_t>(id)];
  }

  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  std::size_t num_chars() const { return tokens_.size() - kNumSpecial; }

  /// All non-special characters in id order.
  std::u32string chars() const { return std::u32string(chars_.begin() + kNumSpecial, chars_.end()); }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write vocabulary " + path);
    for (const auto& t : tokens_) os << t << "\n";
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read vocabulary " + path);
    Vocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (lineno <= kNumSpecial) {
        if (line != v.tokens_[lineno - 1]) {
          throw CorpusError(path + ":" + std::to_string(lineno) + ": expected special token " +
                            v.tokens_[lineno - 1]);
        }
        continue;
      }
      const auto cps = utf8_decode(line);
      if (cps.size() != 1) throw CorpusError(path + ":" + std::to_string(lineno) + ": not a single character");
      v.add(cps[0]);
    }
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, int> ids_;
};

/// A character-aligned (source, target) pair.
struct CscExample {
  std::u32string source;
  std::u32string target;

  std::vector<std::size_t> error_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < source.size() && i < target.size(); ++i)
      if (source[i] != target[i]) out.push_back(i);
    return out;
  }

  bool operator==(const CscExample&) const = default;
};

enum class CorpusFormat { kTsv, kJsonl };

CorpusFormat format_from_path(const std::string& path);

struct LoadResult {
  std::vector<CscExample> examples;
  std::vector<std::string> diagnostics;
};

/// Parses a corpus from a stream. Malformed or length-mismatched records are
/// skipped with a line-numbered diagnostic; blank lines are ignored.
LoadResult parse_corpus(std::istream& is, CorpusFormat format, const std::string& name = "<stream>");

LoadResult load_corpus(const std::string& path, CorpusFormat format);

LoadResult load_corpus(const std::string& path);

void write_corpus(std::ostream& os, const std::vector<CscExample>& examples, CorpusFormat format);

void save_corpus(const std::string& path, const std::vector<CscExample>& examples,
                        CorpusFormat format = CorpusFormat::kTsv);

/// Per-character substitution candidates, split by similarity kind.
struct ConfusionSpec {
  double rate = 0.0;
  std::map<char32_t, std::u32string> phonetic;
  std::map<char32_t, std::u32string> graphic;

  /// Phonetic then graphic candidates, duplicates removed.
  std::u32string candidates(char32_t c) const {
    std::u32string out;
    for (const auto* table : {&phonetic, &graphic}) {
      if (auto it = table->find(c); it != table->end()) {
        for (char32_t x : it->second)
          if (out.find(x) == std::u32string::npos) out.push_back(x);
      }
    }
    return out;
  }

  std::vector<std::string> validate(const Vocabulary& vocab) const {
    std::vector<std::string> out;
    if (rate < 0.0 || rate > 1.0) out.push_back("rate " + std::to_string(rate) + " outside [0, 1]");
    for (const auto* table : {&phonetic, &graphic}) {
      for (const auto& [c, cands] : *table) {
        for (char32_t x : cands) {
          if (x == c) out.push_back(utf8_encode(c) + " lists itself as a candidate");
          if (!vocab.contains(x)) out.push_back("candidate " + utf8_encode(x) + " of " + utf8_encode(c) + " not in vocabulary");
        }
      }
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["rate"] = rate;
    for (const auto& [name, table] : {std::pair{"phonetic", &phonetic}, std::pair{"graphic", &graphic}}) {
      nlohmann::json t = nlohmann::json::object();
      for (const auto& [c, cands] : *table) {
        nlohmann::json arr = nlohmann::json::array();
        for (char32_t x : cands) arr.push_back(utf8_encode(x));
        t[utf8_encode(c)] = arr;
      }
      j[name] = t;
    }
    return j;
  }

  static ConfusionSpec from_json(const nlohmann::json& j) {
    ConfusionSpec spec;
    spec.rate = j.at("rate").get<double>();
    for (const auto& [name, table] : {std::pair{"phonetic", &spec.phonetic}, std::pair{"graphic", &spec.graphic}}) {
      if (!j.contains(name)) continue;
      for (const auto& [key, arr] : j.at(name).items()) {
        const auto k = utf8_decode(key);
        if (k.size() != 1) throw CorpusError(std::string("confusion key is not one character: ") + key);
        std::u32string cands;
        for (const auto& x : arr) {
          const auto cp = utf8_decode(x.get<std::string>());
          if (cp.size() != 1) throw CorpusError("confusion candidate is not one character");
          cands.push_back(cp[0]);
        }
        (*table)[k[0]] = cands;
      }
    }
    return spec;
  }

  static ConfusionSpec load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read confusion spec " + path);
    return from_json(nlohmann::json::parse(is));
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write confusion spec " + path);
    os << to_json().dump(1) << "\n";
  }
};

/// Corrupts each character independently with probability `rate`, drawing
/// the replacement uniformly from its candidates. Target is the clean input.
std::vector<CscExample> synthesize_corpus(const std::vector<std::u32string>& clean,
                                                 const ConfusionSpec& spec, std::uint64_t seed);

/// Padded id matrices for a list of examples. Each row is
/// [CLS] chars... [SEP] [PAD]...; rows have exactly max_len entries.
struct Batch {
  std::size_t rows = 0;
  std::size_t len = 0;
  std::vector<int> source_ids;
  std::vector<int> target_ids;
  std::vector<std::uint8_t> mask;       // 1 over non-PAD positions
  std::vector<std::uint8_t> loss_mask;  // 1 where the target enters the loss
  std::vector<std::size_t> lengths;     // characters kept per row
  std::vector<std::string> warnings;
};

Batch make_batch(const std::vector<CscExample>& examples, const Vocabulary& vocab, std::size_t max_len);

}  // namespace realise
