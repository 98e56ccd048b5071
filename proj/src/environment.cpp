#include "spars/environment.hpp"

#include <algorithm>

namespace spars::env {

namespace {

void check_extents(Dims3 extents, Dims3 dims) {
  if (extents.x <= 0 || extents.y <= 0 || extents.z <= 0)
    throw parameter_error("window extents must be positive, got " + extents.str());
  if (extents.x > dims.x || extents.y > dims.y || extents.z > dims.z)
    throw parameter_error("window extents " + extents.str() +
                          " exceed volume dims " + dims.str());
}

int clamp_corner(int v, int dim, int extent) {
  return std::clamp(v, 0, dim - extent);
}

}  // namespace

EnvState initial_state(const Case& c, Dims3 extents, StartMode mode,
                       std::mt19937_64& rng) {
  check_extents(extents, c.volume.dims);
  EnvState s;
  s.case_id = c.id;
  s.window.extents = extents;
  if (mode == StartMode::centre) {
    s.window.corner = {(c.volume.dims.x - extents.x) / 2,
                       (c.volume.dims.y - extents.y) / 2,
                       (c.volume.dims.z - extents.z) / 2};
  } else {
    std::uniform_int_distribution<int> dx(0, c.volume.dims.x - extents.x);
    std::uniform_int_distribution<int> dy(0, c.volume.dims.y - extents.y);
    std::uniform_int_distribution<int> dz(0, c.volume.dims.z - extents.z);
    s.window.corner = {dx(rng), dy(rng), dz(rng)};
  }
  return s;
}

EnvState initial_state(const Case& c, Dims3 extents) {
  std::mt19937_64 unused(0);
  return initial_state(c, extents, StartMode::centre, unused);
}

EnvState apply_action(const EnvState& state, Dims3 volume_dims, Action action,
                      int step_distance) {
  if (action.index < 0 || action.index >= kActionCount)
    throw parameter_error("action index out of range: " + std::to_string(action.index));
  const Dims3 d = action.delta(step_distance);
  EnvState next = state;
  next.window.corner.x =
      clamp_corner(state.window.corner.x + d.x, volume_dims.x, state.window.extents.x);
  next.window.corner.y =
      clamp_corner(state.window.corner.y + d.y, volume_dims.y, state.window.extents.y);
  next.window.corner.z =
      clamp_corner(state.window.corner.z + d.z, volume_dims.z, state.window.extents.z);
  next.step = state.step + 1;
  return next;
}

Volume crop_window(const Case& c, const WindowSpec& w) {
  const Dims3& d = c.volume.dims;
  if (w.corner.x < 0 || w.corner.y < 0 || w.corner.z < 0 ||
      w.corner.x + w.extents.x > d.x || w.corner.y + w.extents.y > d.y ||
      w.corner.z + w.extents.z > d.z)
    throw parameter_error("crop_window: window out of bounds (corner " +
                          w.corner.str() + ", extents " + w.extents.str() +
                          ", volume " + d.str() + ")");
  Volume out(w.extents);
  for (int z = 0; z < w.extents.z; ++z)
    for (int y = 0; y < w.extents.y; ++y) {
      const float* src =
          c.volume.voxels.data() + c.volume.index(w.corner.x, w.corner.y + y, w.corner.z + z);
      float* dst = out.voxels.data() + out.index(0, y, z);
      std::copy(src, src + w.extents.x, dst);
    }
  return out;
}

RewardPair reward_pair_from_scores(float f_m, float f_n) {
  RewardPair rp;
  rp.r_m = f_m >= f_n ? 1 : -1;
  rp.r_n = -rp.r_m;
  return rp;
}

RewardPair compute_reward_pair(const WindowScorer& scorer, const Case& c,
                               const EnvState& s_m, const EnvState& s_n) {
  if (s_m.case_id != s_n.case_id || s_m.case_id != c.id)
    throw parameter_error("compute_reward_pair: states reference different cases");
  return reward_pair_from_scores(scorer(c, s_m.window), scorer(c, s_n.window));
}

}  // namespace spars::env
