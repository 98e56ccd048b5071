// synthetic.hpp — synthetic case generation (stand-in volumes with an organ
// region and ellipsoidal ROIs), image-level label derivation, dataset
// splitting, and the case manifest.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spars/volume.hpp"

namespace spars::data {

struct GenParams {
  Dims3 dims{64, 64, 32};
  int roi_min = 0;
  int roi_max = 12;
  int semiaxis_min = 2;   // voxels per ROI semi-axis
  int semiaxis_max = 12;
  float noise_sigma = 0.05f;
};

struct Case {
  std::string id;
  Volume volume;
  MaskVolume mask;
  int label = 0;  // 1 iff the mask contains any class-2 voxel
};

// Deterministic function of (seed, params). The organ is a large
// super-ellipsoid (class 1); ROIs are ellipsoids (class 2) carved inside it
// with an intensity offset of random sign.
Case generate_synthetic_case(std::uint64_t seed, const GenParams& params);
Case generate_synthetic_case(std::uint64_t seed, Dims3 dims, int roi_min, int roi_max);

int derive_image_label(const MaskVolume& mask);

struct DatasetSplit {
  std::vector<std::string> development;
  std::vector<std::string> test;
};

// Deterministic shuffle; development receives the rounding remainder.
DatasetSplit split_dataset(const std::vector<std::string>& case_ids,
                           std::pair<int, int> ratio, std::uint64_t seed);

struct CaseRecord {
  std::string id;
  std::string volume_path;
  std::string mask_path;
  int label = 0;
};

void write_manifest(const std::string& path, const std::vector<CaseRecord>& records);
std::vector<CaseRecord> read_manifest(const std::string& path);

Case load_case(const CaseRecord& record);

}  // namespace spars::data
