// environment.hpp — the windowed MDP: states are fixed-extent crops whose
// corner an agent moves in 6 axis directions by a fixed step, and the
// comparative self-play reward pair.
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <unordered_map>

#include "spars/synthetic.hpp"
#include "spars/volume.hpp"

namespace spars::env {

using data::Case;
using data::parameter_error;
using data::Volume;

struct WindowSpec {
  Dims3 corner;   // (a,b,c) voxel coordinates of the low corner
  Dims3 extents;  // (wx,wy,wz)
  friend bool operator==(const WindowSpec&, const WindowSpec&) = default;
};

struct EnvState {
  std::string case_id;
  WindowSpec window;
  int step = 0;
};

// Action index in {0..5}: axis = index/2, direction -/+ by index%2.
struct Action {
  int index = 0;

  // displacement for step distance d
  Dims3 delta(int d) const {
    const int axis = index / 2;
    const int sign = (index % 2 == 0) ? -1 : 1;
    Dims3 out;
    if (axis == 0) out.x = sign * d;
    if (axis == 1) out.y = sign * d;
    if (axis == 2) out.z = sign * d;
    return out;
  }
};

inline constexpr int kActionCount = 6;

struct RewardPair {
  int r_m = 0;  // +1 or -1
  int r_n = 0;  // always -r_m
};

enum class StartMode { centre, random };

EnvState initial_state(const Case& c, Dims3 extents, StartMode mode,
                       std::mt19937_64& rng);
EnvState initial_state(const Case& c, Dims3 extents);  // centre start

// Deterministic successor: move by the action's displacement, clamp per axis.
EnvState apply_action(const EnvState& state, Dims3 volume_dims, Action action,
                      int step_distance);

// Exact extents-shaped sub-volume at the window corner. Pure read.
Volume crop_window(const Case& c, const WindowSpec& window);

// Classifier score for a window; implementations may cache by corner.
using WindowScorer = std::function<float(const Case&, const WindowSpec&)>;

// r_m = +1 iff score(s_m) >= score(s_n), r_n = -r_m. Ties go to m.
RewardPair compute_reward_pair(const WindowScorer& scorer, const Case& c,
                               const EnvState& s_m, const EnvState& s_n);
RewardPair reward_pair_from_scores(float f_m, float f_n);

// Per-case memo of window scores keyed by corner; the classifier is fixed
// while the policy trains, so scores never go stale.
class ScoreCache {
 public:
  explicit ScoreCache(WindowScorer scorer) : scorer_(std::move(scorer)) {}

  float operator()(const Case& c, const WindowSpec& w) {
    const std::uint64_t key =
        (static_cast<std::uint64_t>(static_cast<std::uint32_t>(w.corner.x)) << 42) |
        (static_cast<std::uint64_t>(static_cast<std::uint32_t>(w.corner.y)) << 21) |
        static_cast<std::uint64_t>(static_cast<std::uint32_t>(w.corner.z));
    auto& per_case = cache_[c.id];
    auto it = per_case.find(key);
    if (it != per_case.end()) return it->second;
    const float s = scorer_(c, w);
    per_case.emplace(key, s);
    return s;
  }

  void clear() { cache_.clear(); }

 private:
  WindowScorer scorer_;
  std::unordered_map<std::string, std::unordered_map<std::uint64_t, float>> cache_;
};

}  // namespace spars::env
