#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "selfrobust/network.hpp"

namespace selfrobust {

// Parameter checkpoint, a flat binary file:
//   magic "SRB1", then per tensor:
//     u32 name length, name bytes, u32 rank, u32 dims[rank],
//     float32 data (row-major)
// All integers and floats little-endian. Doubles are narrowed to float32 on
// save, so checkpoints are precision-independent.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("checkpoint: truncated file " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

inline float get_f32(std::istream& is, const std::string& path) {
  const std::uint32_t u = get_u32(is, path);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const ParameterSet<S>& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write("SRB1", 4);
  for (const auto& [name, t] : params.tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (std::int64_t i = 0; i < t.size(); ++i)
      detail::put_f32(os, static_cast<float>(t[i]));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

template <typename S>
ParameterSet<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SRB1", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  ParameterSet<S> params;
  while (true) {
    is.peek();
    if (is.eof()) break;
    const std::uint32_t name_len = detail::get_u32(is, path);
    if (name_len == 0 || name_len > 4096)
      throw std::runtime_error("checkpoint: implausible name length in " + path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw std::runtime_error("checkpoint: truncated file " + path);
    const std::uint32_t rank = detail::get_u32(is, path);
    if (rank == 0 || rank > 8)
      throw std::runtime_error("checkpoint: implausible rank in " + path);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::get_u32(is, path));
    Tensor<S> t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<S>(detail::get_f32(is, path));
    t.require_finite("checkpoint tensor '" + name + "'");
    if (!params.tensors.emplace(std::move(name), std::move(t)).second)
      throw std::runtime_error("checkpoint: duplicate tensor name in " + path);
  }
  return params;
}

}  // namespace selfrobust
