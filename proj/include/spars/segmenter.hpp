// segmenter.hpp — inference rollout from a centre start with rho-termination,
// per-window additive accumulation into the probability map, thresholding,
// and the Dice / mIoU metrics.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spars/environment.hpp"
#include "spars/selfplay.hpp"
#include "spars/volume.hpp"

namespace spars::seg {

enum class Normalization { none, max, visit_count };

struct InferenceConfig {
  double rho = 0.3;             // termination threshold on the window score
  int e_max = 256;              // step cap when the score never crosses rho
  double map_threshold = 0.5;   // final binarization threshold (>= is positive)
  Normalization normalization = Normalization::max;
  int step_distance = 4;
  // Alternative rho semantics (not the default reading): terminate once the
  // accumulated map's peak voxel reaches rho * e_max, i.e. once enough
  // overlapping evidence has piled up somewhere, instead of on one window
  // score. A confident classifier crosses any single-step rho immediately;
  // this reading keeps the rollout alive until localization concentrates.
  bool accumulated_termination = false;

  void validate() const {
    if (rho <= 0.0 || rho >= 1.0)
      throw data::parameter_error("InferenceConfig: rho must be in (0,1)");
    if (e_max < 1) throw data::parameter_error("InferenceConfig: e_max must be >= 1");
  }
};

struct StepLog {
  int t = 0;
  Dims3 corner;
  float score = 0.0f;
};

struct SegResult {
  data::ProbabilityMap map;
  std::vector<std::uint32_t> visits;  // per-voxel visit counts
  std::vector<StepLog> log;
};

// Centre-start rollout: every visited window adds its scalar score to each
// in-window voxel; stops at the first score > rho or after e_max windows.
SegResult run_segmentation(rl::PolicyNet& policy, const env::WindowScorer& scorer,
                           const data::Case& c, Dims3 window_extents,
                           const InferenceConfig& cfg, std::mt19937_64& rng);

struct ThresholdResult {
  data::MaskVolume mask;  // values {0,1}
  bool all_zero_warning = false;
};

// Optional normalization, then voxel >= map_threshold -> 1.
ThresholdResult threshold_map(const data::ProbabilityMap& map, const InferenceConfig& cfg,
                              const std::vector<std::uint32_t>* visits = nullptr);

// 2|P∩T| / (|P|+|T|) against truth class 2; 1.0 when both empty.
double dice(const data::MaskVolume& pred, const data::MaskVolume& truth);

// Mean IoU over {tumour, non-tumour}; empty-empty class counts as 1.0.
double miou(const data::MaskVolume& pred, const data::MaskVolume& truth);

// JSON lines: {"t":..,"corner":[a,b,c],"score":..}
void write_trajectory_log(const std::string& path, const std::vector<StepLog>& log);
std::vector<StepLog> read_trajectory_log(const std::string& path);

}  // namespace spars::seg
