#include "spars/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"
#include "spars/rng.hpp"

namespace spars::data {

namespace {

struct Ellipsoid {
  double cx, cy, cz;
  double ax, ay, az;
  double power;  // 2 = ellipsoid, >2 = boxier super-ellipsoid

  bool contains(int x, int y, int z) const {
    const double u = std::abs((x - cx) / ax);
    const double v = std::abs((y - cy) / ay);
    const double w = std::abs((z - cz) / az);
    return std::pow(u, power) + std::pow(v, power) + std::pow(w, power) <= 1.0;
  }
};

void validate(const GenParams& p) {
  if (p.dims.x < 16 || p.dims.y < 16 || p.dims.z < 16)
    throw parameter_error("generate_synthetic_case: dims must each be >= 16, got " +
                          p.dims.str());
  if (p.roi_min < 0 || p.roi_max > 12 || p.roi_min > p.roi_max)
    throw parameter_error("generate_synthetic_case: roi_count_range must be within [0,12]");
  if (p.semiaxis_min < 1 || p.semiaxis_max < p.semiaxis_min)
    throw parameter_error("generate_synthetic_case: bad semi-axis range");
}

}  // namespace

Case generate_synthetic_case(std::uint64_t seed, const GenParams& p) {
  validate(p);
  auto rng = substream(seed, "case");
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const Dims3 d = p.dims;
  Case out;
  out.id = "case-" + std::to_string(seed);
  out.volume = Volume(d);
  out.mask = MaskVolume(d);

  // organ: one large super-ellipsoid centred with jitter
  Ellipsoid organ;
  organ.cx = d.x * (0.5 + 0.03 * (unit(rng) - 0.5));
  organ.cy = d.y * (0.5 + 0.03 * (unit(rng) - 0.5));
  organ.cz = d.z * (0.5 + 0.03 * (unit(rng) - 0.5));
  organ.ax = d.x * (0.34 + 0.03 * unit(rng));
  organ.ay = d.y * (0.34 + 0.03 * unit(rng));
  organ.az = d.z * (0.34 + 0.03 * unit(rng));
  organ.power = 2.5;

  const float background = 0.42f + 0.02f * static_cast<float>(unit(rng));
  const float organ_level = 0.48f + 0.04f * static_cast<float>(unit(rng));

  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        const bool inside = organ.contains(x, y, z);
        out.mask.at(x, y, z) = inside ? 1 : 0;
        out.volume.at(x, y, z) = inside ? organ_level : background;
      }

  // ROIs: ellipsoids seeded at organ voxels, carved only where the organ is
  std::uniform_int_distribution<int> roi_count(p.roi_min, p.roi_max);
  const int k = roi_count(rng);
  std::uniform_int_distribution<int> px(0, d.x - 1), py(0, d.y - 1), pz(0, d.z - 1);
  std::uniform_real_distribution<double> axis(p.semiaxis_min, p.semiaxis_max);
  std::uniform_real_distribution<float> offset_mag(0.15f, 0.4f);

  for (int r = 0; r < k; ++r) {
    int cx, cy, cz;
    int tries = 0;
    do {
      cx = px(rng);
      cy = py(rng);
      cz = pz(rng);
    } while (out.mask.at(cx, cy, cz) != 1 && ++tries < 10000);
    Ellipsoid roi{static_cast<double>(cx), static_cast<double>(cy),
                  static_cast<double>(cz), axis(rng), axis(rng), axis(rng), 2.0};
    const float sign = unit(rng) < 0.5 ? -1.0f : 1.0f;
    const float offset = sign * offset_mag(rng);
    const int x0 = std::max(0, cx - static_cast<int>(roi.ax) - 1);
    const int x1 = std::min(d.x - 1, cx + static_cast<int>(roi.ax) + 1);
    const int y0 = std::max(0, cy - static_cast<int>(roi.ay) - 1);
    const int y1 = std::min(d.y - 1, cy + static_cast<int>(roi.ay) + 1);
    const int z0 = std::max(0, cz - static_cast<int>(roi.az) - 1);
    const int z1 = std::min(d.z - 1, cz + static_cast<int>(roi.az) + 1);
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          if (out.mask.at(x, y, z) == 0) continue;  // ROI stays inside the organ
          if (!roi.contains(x, y, z)) continue;
          out.mask.at(x, y, z) = 2;
          out.volume.at(x, y, z) = organ_level + offset;
        }
  }

  std::normal_distribution<float> noise(0.0f, p.noise_sigma);
  for (auto& v : out.volume.voxels) v = std::clamp(v + noise(rng), 0.0f, 1.0f);

  out.label = derive_image_label(out.mask);
  return out;
}

Case generate_synthetic_case(std::uint64_t seed, Dims3 dims, int roi_min, int roi_max) {
  GenParams p;
  p.dims = dims;
  p.roi_min = roi_min;
  p.roi_max = roi_max;
  return generate_synthetic_case(seed, p);
}

int derive_image_label(const MaskVolume& mask) {
  for (std::uint8_t v : mask.labels)
    if (v == 2) return 1;
  return 0;
}

DatasetSplit split_dataset(const std::vector<std::string>& case_ids,
                           std::pair<int, int> ratio, std::uint64_t seed) {
  if (case_ids.empty()) throw parameter_error("split_dataset: empty case list");
  if (ratio.first <= 0 || ratio.second < 0)
    throw parameter_error("split_dataset: ratio parts must be positive");
  std::vector<std::string> ids = case_ids;
  auto rng = substream(seed, "split");
  std::shuffle(ids.begin(), ids.end(), rng);
  const std::size_t n = ids.size();
  const std::size_t test_n =
      n * static_cast<std::size_t>(ratio.second) /
      static_cast<std::size_t>(ratio.first + ratio.second);
  DatasetSplit split;
  split.development.assign(ids.begin(), ids.begin() + (n - test_n));
  split.test.assign(ids.begin() + (n - test_n), ids.end());
  return split;
}

void write_manifest(const std::string& path, const std::vector<CaseRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records)
    arr.push_back({{"id", r.id},
                   {"volume_path", r.volume_path},
                   {"mask_path", r.mask_path},
                   {"label", r.label}});
  std::ofstream os(path);
  if (!os) throw format_error(path + ": cannot open for writing");
  os << arr.dump(2) << "\n";
}

std::vector<CaseRecord> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw format_error(path + ": cannot open");
  nlohmann::json arr;
  try {
    is >> arr;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path + ": invalid manifest JSON: " + e.what());
  }
  std::vector<CaseRecord> out;
  for (const auto& item : arr) {
    CaseRecord r;
    r.id = item.at("id").get<std::string>();
    r.volume_path = item.at("volume_path").get<std::string>();
    r.mask_path = item.at("mask_path").get<std::string>();
    r.label = item.at("label").get<int>();
    out.push_back(std::move(r));
  }
  return out;
}

Case load_case(const CaseRecord& record) {
  Case c;
  c.id = record.id;
  c.volume = read_volume(record.volume_path);
  c.mask = read_mask(record.mask_path);
  c.label = record.label;
  if (c.volume.dims != c.mask.dims)
    throw format_error(record.id + ": volume dims " + c.volume.dims.str() +
                       " do not match mask dims " + c.mask.dims.str());
  return c;
}

}  // namespace spars::data
