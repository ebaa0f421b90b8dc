// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "realise/neural/tensor.hpp"

// Checkpoint layout (little-endian):
//   "RLCK" u32 version=1 u32 count
//   per tensor: u32 name_len, name bytes, u32 ndim, u32 dims[ndim], f32 data[numel]
// Hyperparameters live in a JSON sidecar at <path>.json.
namespace realise::nn {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoredTensor {
  Shape shape;
  std::vector<float> values;
};

using TensorMap = std::map<std::string, StoredTensor>;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw CheckpointError(path + ": truncated at byte " + std::to_string(static_cast<long>(is.gcount())));
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, Tensor<T>>>& tensors,
                     const nlohmann::json& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  os.write("RLCK", 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (T v : t.data()) detail::put_f32(os, static_cast<float>(v));
  }
  if (!os) throw CheckpointError("write failed for " + path);
  std::ofstream js(path + ".json");
  if (!js) throw CheckpointError("cannot open " + path + ".json for writing");
  js << meta.dump(2) << "\n";
}

inline TensorMap load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "RLCK", 4) != 0) {
    throw CheckpointError(path + ": bad magic header");
  }
  const auto version = detail::get_u32(is, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported version " + std::to_string(version));
  }
  const auto count = detail::get_u32(is, path);
  TensorMap out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = detail::get_u32(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw CheckpointError(path + ": truncated tensor name");
    const auto ndim = detail::get_u32(is, path);
    StoredTensor st;
    for (std::uint32_t d = 0; d < ndim; ++d) st.shape.push_back(detail::get_u32(is, path));
    st.values.resize(numel(st.shape));
    for (auto& v : st.values) v = std::bit_cast<float>(detail::get_u32(is, path));
    if (!out.emplace(name, std::move(st)).second) throw CheckpointError(path + ": duplicate tensor " + name);
  }
  return out;
}

inline nlohmann::json load_checkpoint_meta(const std::string& path) {
  std::ifstream is(path + ".json");
  if (!is) throw CheckpointError("cannot open checkpoint sidecar " + path + ".json");
  return nlohmann::json::parse(is);
}

/// Copies a stored tensor into a live one; shapes must match exactly.
template <typename T>
void assign(Tensor<T>& dst, const StoredTensor& src, const std::string& name) {
  if (dst.shape() != src.shape) {
    throw CheckpointError("shape mismatch for " + name + ": checkpoint " + shape_str(src.shape) +
                          " vs model " + shape_str(dst.shape()));
  }
  auto d = dst.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(src.values[i]);
}

}  // namespace realise::nn
