// SPDX-License-Identifier: Apache-2.0
#include "realise/glyph.hpp"

namespace realise {

double pixel_overlap(const GlyphImage& a, const GlyphImage& b) {
  std::size_t same = 0;
  for (std::size_t i = 0; i < GlyphImage::kBytes; ++i) same += a.pixels[i] == b.pixels[i];
  return static_cast<double>(same) / static_cast<double>(GlyphImage::kBytes);
}

GlyphAtlas build_synthetic_atlas(const Vocabulary& vocab, const ConfusionSpec& confusion,
                                        std::uint64_t seed, double flip_fraction) {
  const auto chars = vocab.chars();
  std::vector<std::size_t> parent(chars.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto root = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  std::map<char32_t, std::size_t> index;
  for (std::size_t i = 0; i < chars.size(); ++i) index[chars[i]] = i;
  for (const auto& [c, cands] : confusion.graphic) {
    auto a = index.find(c);
    if (a == index.end()) continue;
    for (char32_t x : cands) {
      auto b = index.find(x);
      if (b == index.end()) continue;
      const auto ra = root(a->second), rb = root(b->second);
      if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
  }
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution bit(0.5);
  const auto flips = static_cast<std::size_t>(flip_fraction * static_cast<double>(GlyphImage::kPlane) + 0.5);
  std::map<std::size_t, GlyphImage> bases;
  GlyphAtlas atlas;
  std::vector<std::size_t> order(GlyphImage::kPlane);
  for (std::size_t i = 0; i < chars.size(); ++i) {
    const auto r = root(i);
    auto it = bases.find(r);
    if (it == bases.end()) {
      GlyphImage base;
      for (auto& p : base.pixels) p = bit(rng) ? 255 : 0;
      it = bases.emplace(r, base).first;
    }
    GlyphImage img = it->second;
    for (std::size_t c = 0; c < GlyphImage::kChannels; ++c) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t k = 0; k < flips; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, order.size() - 1);
        std::swap(order[k], order[pick(rng)]);
        auto& p = img.pixels[c * GlyphImage::kPlane + order[k]];
        p = p ? 0 : 255;
      }
    }
    atlas.insert(chars[i], img);
  }
  return atlas;
}

}  // namespace realise
