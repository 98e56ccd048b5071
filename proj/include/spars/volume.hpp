// volume.hpp — 3D scalar volumes and label masks with bit-exact binary I/O.
// File formats (little-endian, x-fastest voxel ordering):
//   volume "SPV1" | u32 nx,ny,nz | f32 voxels
//   mask   "SPM1" | u32 nx,ny,nz | u8 labels {0,1,2}
//   map    "SPP1" | u32 nx,ny,nz | f32 accumulator values
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "spars/geometry.hpp"

namespace spars::data {

struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct parameter_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Volume {
  Dims3 dims;
  std::vector<float> voxels;  // normalized to [0,1]

  Volume() = default;
  explicit Volume(Dims3 d, float fill = 0.0f) : dims(d), voxels(d.count(), fill) {}

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims.x) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.y) * z);
  }
  float& at(int x, int y, int z) { return voxels[index(x, y, z)]; }
  float at(int x, int y, int z) const { return voxels[index(x, y, z)]; }
};

struct MaskVolume {
  Dims3 dims;
  std::vector<std::uint8_t> labels;  // 0 background, 1 organ, 2 roi

  MaskVolume() = default;
  explicit MaskVolume(Dims3 d, std::uint8_t fill = 0) : dims(d), labels(d.count(), fill) {}

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims.x) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.y) * z);
  }
  std::uint8_t& at(int x, int y, int z) { return labels[index(x, y, z)]; }
  std::uint8_t at(int x, int y, int z) const { return labels[index(x, y, z)]; }
};

// Per-voxel accumulation map (z_n) produced by the segmenter.
struct ProbabilityMap {
  Dims3 dims;
  std::vector<float> values;

  ProbabilityMap() = default;
  explicit ProbabilityMap(Dims3 d) : dims(d), values(d.count(), 0.0f) {}
};

void write_volume(const std::string& path, const Volume& v);
Volume read_volume(const std::string& path);
void write_mask(const std::string& path, const MaskVolume& m);
MaskVolume read_mask(const std::string& path);
void write_prob_map(const std::string& path, const ProbabilityMap& m);
ProbabilityMap read_prob_map(const std::string& path);

// Plain-text PGM (P2) slice export for eyeballing maps and masks.
void write_pgm_slices(const std::string& dir, const std::string& stem,
                      const ProbabilityMap& m);

}  // namespace spars::data
