#include "spars/volume.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace spars::data {

namespace {

constexpr std::uint32_t kMaxDim = 1u << 16;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is)
    throw format_error(path + ": truncated header at byte offset " +
                       std::to_string(static_cast<long>(is.gcount())));
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

Dims3 read_header(std::istream& is, const std::string& path, const char* magic) {
  char m[4];
  is.read(m, 4);
  if (!is || std::memcmp(m, magic, 4) != 0)
    throw format_error(path + ": bad magic at byte offset 0, expected \"" +
                       std::string(magic) + "\"");
  Dims3 d;
  d.x = static_cast<int>(read_u32(is, path));
  d.y = static_cast<int>(read_u32(is, path));
  d.z = static_cast<int>(read_u32(is, path));
  if (d.x <= 0 || d.y <= 0 || d.z <= 0 || static_cast<std::uint32_t>(d.x) > kMaxDim ||
      static_cast<std::uint32_t>(d.y) > kMaxDim || static_cast<std::uint32_t>(d.z) > kMaxDim)
    throw format_error(path + ": dimension overflow in header at byte offset 4 (" +
                       d.str() + ")");
  return d;
}

template <class T>
std::vector<T> read_payload(std::istream& is, const std::string& path, std::size_t count) {
  std::vector<T> out(count);
  is.read(reinterpret_cast<char*>(out.data()),
          static_cast<std::streamsize>(count * sizeof(T)));
  if (static_cast<std::size_t>(is.gcount()) != count * sizeof(T))
    throw format_error(path + ": truncated payload at byte offset " +
                       std::to_string(16 + static_cast<long>(is.gcount())) + ", expected " +
                       std::to_string(count * sizeof(T)) + " payload bytes");
  return out;
}

template <class T>
void write_file(const std::string& path, const char* magic, Dims3 dims,
                const std::vector<T>& payload) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw format_error(path + ": cannot open for writing");
  os.write(magic, 4);
  write_u32(os, static_cast<std::uint32_t>(dims.x));
  write_u32(os, static_cast<std::uint32_t>(dims.y));
  write_u32(os, static_cast<std::uint32_t>(dims.z));
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(T)));
  if (!os) throw format_error(path + ": write failed");
}

}  // namespace

void write_volume(const std::string& path, const Volume& v) {
  write_file(path, "SPV1", v.dims, v.voxels);
}

Volume read_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error(path + ": cannot open");
  Volume v;
  v.dims = read_header(is, path, "SPV1");
  v.voxels = read_payload<float>(is, path, v.dims.count());
  return v;
}

void write_mask(const std::string& path, const MaskVolume& m) {
  write_file(path, "SPM1", m.dims, m.labels);
}

MaskVolume read_mask(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error(path + ": cannot open");
  MaskVolume m;
  m.dims = read_header(is, path, "SPM1");
  m.labels = read_payload<std::uint8_t>(is, path, m.dims.count());
  for (std::size_t i = 0; i < m.labels.size(); ++i)
    if (m.labels[i] > 2)
      throw format_error(path + ": label value " + std::to_string(m.labels[i]) +
                         " out of {0,1,2} at voxel " + std::to_string(i));
  return m;
}

void write_prob_map(const std::string& path, const ProbabilityMap& m) {
  write_file(path, "SPP1", m.dims, m.values);
}

ProbabilityMap read_prob_map(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error(path + ": cannot open");
  ProbabilityMap m;
  m.dims = read_header(is, path, "SPP1");
  m.values = read_payload<float>(is, path, m.dims.count());
  return m;
}

void write_pgm_slices(const std::string& dir, const std::string& stem,
                      const ProbabilityMap& m) {
  std::filesystem::create_directories(dir);
  float mx = 0.0f;
  for (float v : m.values) mx = std::max(mx, v);
  const float scale = mx > 0.0f ? 255.0f / mx : 0.0f;
  for (int z = 0; z < m.dims.z; ++z) {
    std::ostringstream name;
    name << dir << "/" << stem << "_z" << z << ".pgm";
    std::ofstream os(name.str());
    os << "P2\n" << m.dims.x << " " << m.dims.y << "\n255\n";
    for (int y = 0; y < m.dims.y; ++y) {
      for (int x = 0; x < m.dims.x; ++x) {
        const std::size_t i = static_cast<std::size_t>(x) +
                              static_cast<std::size_t>(m.dims.x) *
                                  (static_cast<std::size_t>(y) +
                                   static_cast<std::size_t>(m.dims.y) * z);
        os << static_cast<int>(m.values[i] * scale + 0.5f)
           << (x + 1 == m.dims.x ? "\n" : " ");
      }
    }
  }
}

}  // namespace spars::data
