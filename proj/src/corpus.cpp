// SPDX-License-Identifier: Apache-2.0
#include "realise/corpus.hpp"

namespace realise {

CorpusFormat format_from_path(const std::string& path) {
  const auto dot = path.rfind('.');
  if (dot != std::string::npos && (path.substr(dot) == ".jsonl" || path.substr(dot) == ".json")) {
    return CorpusFormat::kJsonl;
  }
  return CorpusFormat::kTsv;
}

LoadResult parse_corpus(std::istream& is, CorpusFormat format, const std::string& name) {
  LoadResult result;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(lineno) + ": ";
    std::string src, tgt;
    if (format == CorpusFormat::kTsv) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
        result.diagnostics.push_back(where + "expected exactly two tab-separated fields");
        continue;
      }
      src = line.substr(0, tab);
      tgt = line.substr(tab + 1);
    } else {
      try {
        const auto j = nlohmann::json::parse(line);
        src = j.at("source").get<std::string>();
        tgt = j.at("target").get<std::string>();
      } catch (const std::exception& e) {
        result.diagnostics.push_back(where + "bad JSON record (" + e.what() + ")");
        continue;
      }
    }
    CscExample ex;
    try {
      ex.source = utf8_decode(src);
      ex.target = utf8_decode(tgt);
    } catch (const std::exception& e) {
      result.diagnostics.push_back(where + e.what());
      continue;
    }
    if (ex.source.size() != ex.target.size()) {
      result.diagnostics.push_back(where + "length mismatch (source " + std::to_string(ex.source.size()) +
                                   ", target " + std::to_string(ex.target.size()) + ")");
      continue;
    }
    result.examples.push_back(std::move(ex));
  }
  return result;
}

LoadResult load_corpus(const std::string& path, CorpusFormat format) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read corpus " + path);
  auto result = parse_corpus(is, format, path);
  if (result.examples.empty()) {
    std::string msg = "empty corpus " + path;
    if (!result.diagnostics.empty()) msg += " (" + result.diagnostics.front() + ")";
    throw CorpusError(msg);
  }
  return result;
}

LoadResult load_corpus(const std::string& path) { return load_corpus(path, format_from_path(path)); }

void write_corpus(std::ostream& os, const std::vector<CscExample>& examples, CorpusFormat format) {
  for (const auto& ex : examples) {
    if (format == CorpusFormat::kTsv) {
      os << utf8_encode(ex.source) << '\t' << utf8_encode(ex.target) << '\n';
    } else {
      nlohmann::json j{{"source", utf8_encode(ex.source)}, {"target", utf8_encode(ex.target)}};
      os << j.dump() << '\n';
    }
  }
}

void save_corpus(const std::string& path, const std::vector<CscExample>& examples,
                        CorpusFormat format) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write corpus " + path);
  write_corpus(os, examples, format);
}

std::vector<CscExample> synthesize_corpus(const std::vector<std::u32string>& clean,
                                                 const ConfusionSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<CscExample> out;
  out.reserve(clean.size());
  for (const auto& sentence : clean) {
    CscExample ex{sentence, sentence};
    for (auto& c : ex.source) {
      const auto cands = spec.candidates(c);
      if (cands.empty()) continue;
      if (coin(rng) < spec.rate) {
        std::uniform_int_distribution<std::size_t> pick(0, cands.size() - 1);
        c = cands[pick(rng)];
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

Batch make_batch(const std::vector<CscExample>& examples, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 2) throw std::invalid_argument("max_len must be at least 2 for [CLS]/[SEP] framing");
  Batch b;
  b.rows = examples.size();
  b.len = max_len;
  b.source_ids.assign(b.rows * max_len, Vocabulary::kPad);
  b.target_ids.assign(b.rows * max_len, Vocabulary::kPad);
  b.mask.assign(b.rows * max_len, 0);
  b.loss_mask.assign(b.rows * max_len, 0);
  for (std::size_t r = 0; r < b.rows; ++r) {
    const auto& ex = examples[r];
    std::size_t n = ex.source.size();
    if (n > max_len - 2) {
      b.warnings.push_back("sentence " + std::to_string(r) + " of length " + std::to_string(n) +
                           " truncated to " + std::to_string(max_len - 2));
      n = max_len - 2;
    }
    b.lengths.push_back(n);
    const std::size_t base = r * max_len;
    b.source_ids[base] = b.target_ids[base] = Vocabulary::kCls;
    b.mask[base] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      b.source_ids[base + 1 + i] = vocab.id(ex.source[i]);
      b.target_ids[base + 1 + i] = vocab.id(ex.target[i]);
      b.mask[base + 1 + i] = 1;
      b.loss_mask[base + 1 + i] = 1;
    }
    b.source_ids[base + 1 + n] = b.target_ids[base + 1 + n] = Vocabulary::kSep;
    b.mask[base + 1 + n] = 1;
  }
  return b;
}

}  // namespace realise
