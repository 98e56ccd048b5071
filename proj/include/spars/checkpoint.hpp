// checkpoint.hpp — "SPW1" named-tensor checkpoint format.
// Layout: magic "SPW1" | u32 tensor count | per tensor:
//   u16 name length | name bytes | u8 ndim | u32 dims... | f32 LE data.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "spars/tensor.hpp"

namespace spars::io {

struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using NamedTensors = std::vector<std::pair<std::string, ad::Tensor<float>>>;

namespace detail {

template <class T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::uint64_t bits;
  static_assert(sizeof(T) <= 8);
  std::memcpy(&bits, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const std::string& path, const char* what) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is)
    throw format_error(path + ": truncated while reading " + what +
                       " at byte offset " + std::to_string(static_cast<long>(is.tellg())));
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  T v;
  std::memcpy(&v, &bits, sizeof(T));
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw format_error(path + ": cannot open for writing");
  os.write("SPW1", 4);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(t.shape.size()));
    for (int d : t.shape) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (float v : t.data) detail::write_le<float>(os, v);
  }
  if (!os) throw format_error(path + ": write failed");
}

inline NamedTensors read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error(path + ": cannot open");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "SPW1")
    throw format_error(path + ": bad magic at byte offset 0, expected \"SPW1\"");
  const auto count = detail::read_le<std::uint32_t>(is, path, "tensor count");
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_le<std::uint16_t>(is, path, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw format_error(path + ": truncated tensor name");
    const int ndim = is.get();
    if (ndim == EOF) throw format_error(path + ": truncated ndim");
    std::vector<int> shape(ndim);
    std::size_t numel = 1;
    for (int d = 0; d < ndim; ++d) {
      const auto dim = detail::read_le<std::uint32_t>(is, path, "dimension");
      if (dim == 0 || dim > (1u << 24))
        throw format_error(path + ": dimension overflow (" + std::to_string(dim) + ")");
      shape[d] = static_cast<int>(dim);
      numel *= dim;
    }
    ad::Tensor<float> t(std::move(shape));
    for (std::size_t j = 0; j < numel; ++j)
      t.data[j] = detail::read_le<float>(is, path, "tensor payload");
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace spars::io
