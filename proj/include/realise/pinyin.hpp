// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "realise/corpus.hpp"
#include "realise/utf8.hpp"

namespace realise {

/// Character -> toned pinyin ("zhong1"). One reading per character.
class PinyinTable {
 public:
  /// Keeps the first reading when a character is inserted twice.
  bool insert(char32_t ch, std::string pinyin) { return entries_.emplace(ch, std::move(pinyin)).second; }

  const std::string* find(char32_t ch) const {
    auto it = entries_.find(ch);
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return entries_.size(); }
  const std::map<char32_t, std::string>& entries() const { return entries_; }

  /// TSV "char<TAB>pinyin". Extra readings of polyphonic characters are ignored.
  static PinyinTable load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read pinyin table " + path);
    PinyinTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw CorpusError(path + ":" + std::to_string(lineno) + ": expected char<TAB>pinyin");
      }
      const auto ch = utf8_decode(line.substr(0, tab));
      if (ch.size() != 1) throw CorpusError(path + ":" + std::to_string(lineno) + ": key is not one character");
      table.insert(ch[0], line.substr(tab + 1));
    }
    return table;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write pinyin table " + path);
    for (const auto& [ch, py] : entries_) os << utf8_encode(ch) << '\t' << py << '\n';
  }

 private:
  std::map<char32_t, std::string> entries_;
};

/// Symbols are lowercase letters, tone digits 0-4, or the NO_PINYIN marker.
inline constexpr char kNoPinyin = '*';

struct PinyinSeq {
  std::string symbols;

  bool is_no_pinyin() const { return symbols.size() == 1 && symbols[0] == kNoPinyin; }
  std::size_t size() const { return symbols.size(); }
  bool operator==(const PinyinSeq&) const = default;
  auto operator<=>(const PinyinSeq&) const = default;
};

/// Dense symbol ids: PAD, NO_PINYIN, a..z, 0..4.
class PinyinAlphabet {
 public:
  static constexpr int kPad = 0;
  static constexpr int kNoPinyinId = 1;
  static constexpr int kSize = 2 + 26 + 5;

  static int id(char symbol) {
    if (symbol == kNoPinyin) return kNoPinyinId;
    if (symbol >= 'a' && symbol <= 'z') return 2 + (symbol - 'a');
    if (symbol >= '0' && symbol <= '4') return 28 + (symbol - '0');
    throw std::invalid_argument(std::string("symbol '") + symbol + "' not in the pinyin alphabet");
  }

  static char symbol(int id) {
    if (id == kNoPinyinId) return kNoPinyin;
    if (id >= 2 && id < 28) return static_cast<char>('a' + (id - 2));
    if (id >= 28 && id < kSize) return static_cast<char>('0' + (id - 28));
    throw std::out_of_range("pinyin id " + std::to_string(id) + " has no symbol");
  }

  static constexpr int size() { return kSize; }
};

PinyinSeq no_pinyin();

/// Letter-by-letter symbols ending in the tone digit; characters absent from
/// the table map to [NO_PINYIN].
PinyinSeq decompose(char32_t ch, const PinyinTable& table);

/// Token form: multi-character tokens such as "[CLS]" have no pinyin.
PinyinSeq decompose(std::string_view token, const PinyinTable& table);

/// Flags entries that are not lowercase letters followed by one tone digit 0-4.
std::vector<std::string> validate_table(const PinyinTable& table);

/// Right-padded symbol ids, row-major [rows x width].
struct PinyinBatch {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<int> ids;
  std::vector<std::size_t> lengths;
};

PinyinBatch encode_batch(const std::vector<PinyinSeq>& seqs);

}  // namespace realise
