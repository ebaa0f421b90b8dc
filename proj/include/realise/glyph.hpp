// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "realise/corpus.hpp"

namespace realise {

/// Three 32x32 grayscale channels, channel-major.
struct GlyphImage {
  static constexpr std::size_t kChannels = 3;
  static constexpr std::size_t kSize = 32;
  static constexpr std::size_t kPlane = kSize * kSize;
  static constexpr std::size_t kBytes = kChannels * kPlane;

  std::array<std::uint8_t, kBytes> pixels{};

  std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[c * kPlane + y * kSize + x]; }
  bool is_blank() const {
    return std::all_of(pixels.begin(), pixels.end(), [](std::uint8_t p) { return p == 0; });
  }
  /// Keeps only the first font channel.
  GlyphImage single_font() const {
    GlyphImage g;
    std::copy_n(pixels.begin(), kPlane, g.pixels.begin());
    return g;
  }
  bool operator==(const GlyphImage&) const = default;
};

/// Fraction of pixel positions (over all channels) holding equal bytes.
double pixel_overlap(const GlyphImage& a, const GlyphImage& b);

class AtlasError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Character bitmaps with fixed channel order
/// [Simplified Gothic, Traditional Gothic, Small Seal].
class GlyphAtlas {
 public:
  static constexpr std::array<const char*, 3> kFonts = {"simplified-gothic", "traditional-gothic", "small-seal"};
  static constexpr std::uint32_t kVersion = 1;

  void insert(char32_t ch, const GlyphImage& img) {
    if (!images_.emplace(ch, img).second) throw AtlasError("duplicate glyph for " + utf8_encode(ch));
  }

  bool contains(char32_t ch) const { return images_.count(ch) != 0; }
  std::size_t size() const { return images_.size(); }
  const std::map<char32_t, GlyphImage>& images() const { return images_; }

  static const GlyphImage& blank() {
    static const GlyphImage zero{};
    return zero;
  }

  /// Stored bitmap, or the all-zero image when absent (a warning is appended).
  const GlyphImage& lookup(char32_t ch, std::vector<std::string>* warnings = nullptr) const {
    auto it = images_.find(ch);
    if (it != images_.end()) return it->second;
    if (warnings) warnings->push_back("no glyph for " + utf8_encode(ch) + "; using blank image");
    return blank();
  }

  /// Number of vocabulary characters with a stored glyph.
  std::size_t coverage(const Vocabulary& vocab) const {
    std::size_t n = 0;
    for (char32_t c : vocab.chars()) n += contains(c);
    return n;
  }

  // "GLYA", u32 version, u32 count, then per entry: u32 code point + 3072 bytes.
  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write atlas " + path);
    os.write("GLYA", 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(images_.size()));
    for (const auto& [ch, img] : images_) {
      put_u32(os, static_cast<std::uint32_t>(ch));
      os.write(reinterpret_cast<const char*>(img.pixels.data()), GlyphImage::kBytes);
    }
  }

  static GlyphAtlas load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read atlas " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse(bytes, path);
  }

  static GlyphAtlas parse(const std::vector<char>& bytes, const std::string& name = "<atlas>") {
    std::size_t off = 0;
    auto need = [&](std::size_t n, const char* what) {
      if (off + n > bytes.size()) {
        throw AtlasError(name + ": truncated " + what + " at byte offset " + std::to_string(off) + " (file has " +
                         std::to_string(bytes.size()) + " bytes)");
      }
    };
    auto u32 = [&](const char* what) {
      need(4, what);
      std::uint32_t v = 0;
      for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + k])) << (8 * k);
      off += 4;
      return v;
    };
    need(4, "header");
    if (std::memcmp(bytes.data(), "GLYA", 4) != 0) throw AtlasError(name + ": bad magic header");
    off = 4;
    const auto version = u32("version");
    if (version != kVersion) throw AtlasError(name + ": unsupported atlas version " + std::to_string(version));
    const auto count = u32("entry count");
    GlyphAtlas atlas;
    for (std::uint32_t k = 0; k < count; ++k) {
      const auto cp = static_cast<char32_t>(u32("code point"));
      need(GlyphImage::kBytes, "bitmap payload");
      GlyphImage img;
      std::memcpy(img.pixels.data(), bytes.data() + off, GlyphImage::kBytes);
      off += GlyphImage::kBytes;
      if (atlas.contains(cp)) {
        throw AtlasError(name + ": duplicate entry for U+" + std::to_string(static_cast<std::uint32_t>(cp)) +
                         " at byte offset " + std::to_string(off - GlyphImage::kBytes - 4));
      }
      atlas.insert(cp, img);
    }
    return atlas;
  }

 private:
  static void put_u32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                       static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    os.write(b, 4);
  }

  std::map<char32_t, GlyphImage> images_;
};

/// Procedural atlas. Characters linked through graphic candidates form a
/// family sharing one random binary base per channel; every member flips
/// `flip_fraction` of each channel's pixels, so family members overlap by at
/// least 1 - 2*flip_fraction while unrelated characters overlap by ~0.5.
GlyphAtlas build_synthetic_atlas(const Vocabulary& vocab, const ConfusionSpec& confusion,
                                        std::uint64_t seed, double flip_fraction = 0.10);

}  // namespace realise
