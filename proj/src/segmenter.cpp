#include "spars/segmenter.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

namespace spars::seg {

SegResult run_segmentation(rl::PolicyNet& policy, const env::WindowScorer& scorer,
                           const data::Case& c, Dims3 window_extents,
                           const InferenceConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  SegResult result;
  result.map = data::ProbabilityMap(c.volume.dims);
  result.visits.assign(c.volume.dims.count(), 0);

  auto state = env::initial_state(c, window_extents);  // centre start
  float peak = 0.0f;
  for (int t = 0; t < cfg.e_max; ++t) {
    const float score = scorer(c, state.window);
    const auto& w = state.window;
    for (int z = 0; z < w.extents.z; ++z)
      for (int y = 0; y < w.extents.y; ++y) {
        const std::size_t base =
            c.volume.index(w.corner.x, w.corner.y + y, w.corner.z + z);
        float* row = result.map.values.data() + base;
        std::uint32_t* vrow = result.visits.data() + base;
        for (int x = 0; x < w.extents.x; ++x) {
          row[x] += score;
          peak = std::max(peak, row[x]);
          ++vrow[x];
        }
      }
    result.log.push_back({t, w.corner, score});
    const double stat = cfg.accumulated_termination
                            ? peak / static_cast<double>(cfg.e_max)
                            : static_cast<double>(score);
    if (stat > cfg.rho) break;
    auto [action, lp] = rl::sample_action(policy, c, state, rng);
    state = env::apply_action(state, c.volume.dims, action, cfg.step_distance);
  }
  return result;
}

ThresholdResult threshold_map(const data::ProbabilityMap& map, const InferenceConfig& cfg,
                              const std::vector<std::uint32_t>* visits) {
  ThresholdResult out;
  out.mask = data::MaskVolume(map.dims);
  std::vector<float> values = map.values;

  switch (cfg.normalization) {
    case Normalization::none:
      break;
    case Normalization::max: {
      float mx = 0.0f;
      for (float v : values) mx = std::max(mx, v);
      if (mx <= 0.0f) {
        out.all_zero_warning = true;
        return out;  // all-zero map: no division, all-zero mask
      }
      for (auto& v : values) v /= mx;
      break;
    }
    case Normalization::visit_count: {
      if (!visits || visits->size() != values.size())
        throw data::parameter_error("threshold_map: visit counts required for visit_count normalization");
      for (std::size_t i = 0; i < values.size(); ++i)
        if ((*visits)[i] > 0) values[i] /= static_cast<float>((*visits)[i]);
      break;
    }
  }
  for (std::size_t i = 0; i < values.size(); ++i)
    out.mask.labels[i] = values[i] >= static_cast<float>(cfg.map_threshold) ? 1 : 0;
  return out;
}

namespace {

void check_dims(const data::MaskVolume& pred, const data::MaskVolume& truth,
                const char* what) {
  if (pred.dims != truth.dims)
    throw data::parameter_error(std::string(what) + ": dims mismatch " +
                                pred.dims.str() + " vs " + truth.dims.str());
}

}  // namespace

double dice(const data::MaskVolume& pred, const data::MaskVolume& truth) {
  check_dims(pred, truth, "dice");
  std::size_t p = 0, t = 0, both = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool pp = pred.labels[i] != 0;
    const bool tt = truth.labels[i] == 2;
    p += pp;
    t += tt;
    both += pp && tt;
  }
  if (p + t == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + t);
}

double miou(const data::MaskVolume& pred, const data::MaskVolume& truth) {
  check_dims(pred, truth, "miou");
  std::size_t inter_pos = 0, union_pos = 0, inter_neg = 0, union_neg = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool pp = pred.labels[i] != 0;
    const bool tt = truth.labels[i] == 2;
    inter_pos += pp && tt;
    union_pos += pp || tt;
    inter_neg += !pp && !tt;
    union_neg += !pp || !tt;
  }
  const double iou_pos =
      union_pos == 0 ? 1.0 : static_cast<double>(inter_pos) / static_cast<double>(union_pos);
  const double iou_neg =
      union_neg == 0 ? 1.0 : static_cast<double>(inter_neg) / static_cast<double>(union_neg);
  return (iou_pos + iou_neg) / 2.0;
}

void write_trajectory_log(const std::string& path, const std::vector<StepLog>& log) {
  std::ofstream os(path);
  if (!os) throw data::format_error(path + ": cannot open for writing");
  for (const auto& s : log) {
    nlohmann::json j = {{"t", s.t},
                        {"corner", {s.corner.x, s.corner.y, s.corner.z}},
                        {"score", s.score}};
    os << j.dump() << "\n";
  }
}

std::vector<StepLog> read_trajectory_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data::format_error(path + ": cannot open");
  std::vector<StepLog> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    StepLog s;
    s.t = j.at("t").get<int>();
    s.corner = {j.at("corner")[0].get<int>(), j.at("corner")[1].get<int>(),
                j.at("corner")[2].get<int>()};
    s.score = j.at("score").get<float>();
    out.push_back(s);
  }
  return out;
}

}  // namespace spars::seg
