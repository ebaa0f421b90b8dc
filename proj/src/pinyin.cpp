// SPDX-License-Identifier: Apache-2.0
#include "realise/pinyin.hpp"

namespace realise {

PinyinSeq no_pinyin() { return PinyinSeq{std::string(1, kNoPinyin)}; }

PinyinSeq decompose(char32_t ch, const PinyinTable& table) {
  const std::string* py = table.find(ch);
  if (py == nullptr || py->empty()) return no_pinyin();
  return PinyinSeq{*py};
}

PinyinSeq decompose(std::string_view token, const PinyinTable& table) {
  std::u32string cps;
  try {
    cps = utf8_decode(token);
  } catch (const std::invalid_argument&) {
    return no_pinyin();
  }
  if (cps.size() != 1) return no_pinyin();
  return decompose(cps[0], table);
}

std::vector<std::string> validate_table(const PinyinTable& table) {
  std::vector<std::string> out;
  for (const auto& [ch, py] : table.entries()) {
    const std::string who = utf8_encode(ch) + " -> \"" + py + "\": ";
    if (py.size() < 2) {
      out.push_back(who + "too short");
      continue;
    }
    const char tone = py.back();
    if (tone < '0' || tone > '4') out.push_back(who + "missing tone digit 0-4");
    for (std::size_t i = 0; i + 1 < py.size(); ++i) {
      if (py[i] < 'a' || py[i] > 'z') {
        out.push_back(who + "symbol '" + std::string(1, py[i]) + "' outside a-z");
        break;
      }
    }
  }
  return out;
}

PinyinBatch encode_batch(const std::vector<PinyinSeq>& seqs) {
  PinyinBatch b;
  b.rows = seqs.size();
  for (const auto& s : seqs) b.width = std::max(b.width, s.size());
  b.ids.assign(b.rows * b.width, PinyinAlphabet::kPad);
  for (std::size_t r = 0; r < b.rows; ++r) {
    if (seqs[r].size() == 0) throw std::invalid_argument("empty pinyin sequence at row " + std::to_string(r));
    for (std::size_t j = 0; j < seqs[r].size(); ++j) b.ids[r * b.width + j] = PinyinAlphabet::id(seqs[r].symbols[j]);
    b.lengths.push_back(seqs[r].size());
  }
  return b;
}

}  // namespace realise
