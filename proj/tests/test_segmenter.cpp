#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "spars/rng.hpp"
#include "spars/segmenter.hpp"
#include "spars/synthetic.hpp"
#include "testutil.hpp"

using namespace spars;

namespace {

data::Case small_case(std::uint64_t seed = 1) {
  auto c = data::generate_synthetic_case(seed, {32, 32, 16}, 1, 2);
  c.id = "c";
  return c;
}

// Replays a trajectory log into a fresh accumulation map, the slow way.
data::ProbabilityMap replay(const std::vector<seg::StepLog>& log, Dims3 dims,
                            Dims3 extents) {
  data::ProbabilityMap map(dims);
  for (const auto& s : log)
    for (int z = 0; z < extents.z; ++z)
      for (int y = 0; y < extents.y; ++y)
        for (int x = 0; x < extents.x; ++x) {
          const std::size_t i =
              static_cast<std::size_t>(s.corner.x + x) +
              static_cast<std::size_t>(dims.x) *
                  (static_cast<std::size_t>(s.corner.y + y) +
                   static_cast<std::size_t>(dims.y) * (s.corner.z + z));
          map.values[i] += s.score;
        }
  return map;
}

}  // namespace

TEST_CASE("run_segmentation accumulation") {
  auto c = small_case();
  auto policy = rl::make_policy({8, 8, 4}, 0);
  const Dims3 extents{8, 8, 4};

  SUBCASE("a single terminating window writes its score into exactly its voxels") {
    env::WindowScorer scorer = [](const data::Case&, const env::WindowSpec&) {
      return 0.7f;
    };
    seg::InferenceConfig cfg;
    cfg.rho = 0.5;  // 0.7 > rho: stop after the first window
    auto rng = substream(1, "seg");
    auto res = seg::run_segmentation(policy, scorer, c, extents, cfg, rng);
    REQUIRE(res.log.size() == 1);
    CHECK(res.log[0].corner == Dims3{12, 12, 6});  // centre start
    std::size_t inside = 0, outside_nonzero = 0;
    for (int z = 0; z < 16; ++z)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          const float v = res.map.values[c.volume.index(x, y, z)];
          const bool in = x >= 12 && x < 20 && y >= 12 && y < 20 && z >= 6 && z < 10;
          if (in) {
            CHECK(v == 0.7f);
            ++inside;
          } else if (v != 0.0f) {
            ++outside_nonzero;
          }
        }
    CHECK(inside == 8u * 8u * 4u);
    CHECK(outside_nonzero == 0);
  }

  SUBCASE("overlapping windows add their scores") {
    // alternating scores below rho force a multi-step rollout
    int call = 0;
    env::WindowScorer scorer = [&call](const data::Case&, const env::WindowSpec&) {
      return call++ == 0 ? 0.4f : 0.3f;
    };
    seg::InferenceConfig cfg;
    cfg.rho = 0.45;
    cfg.e_max = 2;
    cfg.step_distance = 2;  // < min extent, so consecutive windows overlap
    auto rng = substream(2, "seg");
    auto res = seg::run_segmentation(policy, scorer, c, extents, cfg, rng);
    REQUIRE(res.log.size() == 2);
    const auto oracle = replay(res.log, c.volume.dims, extents);
    CHECK(res.map.values == oracle.values);
    // overlap (if the second window intersects the first) accumulates both
    float mx = 0.0f;
    for (float v : res.map.values) mx = std::max(mx, v);
    CHECK(mx == doctest::Approx(res.log[0].score + res.log[1].score));
  }

  SUBCASE("brute-force replay of the log reproduces the map bit-exactly") {
    auto rng_scores = substream(3, "scores");
    std::uniform_real_distribution<float> unit(0.0f, 0.25f);
    for (int trial = 0; trial < 10; ++trial) {
      env::WindowScorer scorer = [&](const data::Case&, const env::WindowSpec&) {
        return unit(rng_scores);
      };
      seg::InferenceConfig cfg;
      cfg.rho = 0.9;  // never crossed: runs to e_max
      cfg.e_max = 40;
      cfg.step_distance = 4;
      auto rng = substream(100 + trial, "seg");
      auto res = seg::run_segmentation(policy, scorer, c, extents, cfg, rng);
      CHECK(res.log.size() == 40);
      const auto oracle = replay(res.log, c.volume.dims, extents);
      CHECK(res.map.values == oracle.values);
      // visit counts agree with the replayed windows
      for (std::size_t i = 0; i < res.map.values.size(); ++i)
        if (res.visits[i] == 0) CHECK(res.map.values[i] == 0.0f);
    }
  }

  SUBCASE("accumulated termination waits for evidence to pile up") {
    // constant score 0.5 and window == volume: every step adds 0.5 to every
    // voxel, so the map peak after k windows is 0.5k. Single-step mode stops
    // at t=0 (0.5 > rho); accumulated mode stops once 0.5k / e_max > rho.
    env::WindowScorer scorer = [](const data::Case&, const env::WindowSpec&) {
      return 0.5f;
    };
    seg::InferenceConfig cfg;
    cfg.rho = 0.3;
    cfg.e_max = 8;
    cfg.accumulated_termination = true;
    auto rng = substream(4, "seg");
    auto res = seg::run_segmentation(policy, scorer, c, c.volume.dims, cfg, rng);
    // peaks/e_max: 0.0625, 0.125, ..., 0.3125 > 0.3 -> stops after 5 windows
    CHECK(res.log.size() == 5);

    cfg.accumulated_termination = false;
    auto rng2 = substream(4, "seg");
    auto res2 = seg::run_segmentation(policy, scorer, c, c.volume.dims, cfg, rng2);
    CHECK(res2.log.size() == 1);
  }

  SUBCASE("config validation") {
    seg::InferenceConfig bad;
    bad.rho = 0.0;
    CHECK_THROWS_AS(bad.validate(), data::parameter_error);
    bad.rho = 0.3;
    bad.e_max = 0;
    CHECK_THROWS_AS(bad.validate(), data::parameter_error);
  }
}

TEST_CASE("threshold_map") {
  data::ProbabilityMap map({4, 2, 2});
  for (std::size_t i = 0; i < map.values.size(); ++i)
    map.values[i] = 0.1f * static_cast<float>(i);  // 0 .. 1.5

  SUBCASE("max normalization scales the peak to 1") {
    seg::InferenceConfig cfg;
    cfg.normalization = seg::Normalization::max;
    cfg.map_threshold = 0.999;
    auto r = seg::threshold_map(map, cfg);
    std::size_t on = 0;
    for (auto v : r.mask.labels) on += v;
    CHECK(on == 1);  // only the max voxel reaches 1.0
    CHECK(r.mask.labels.back() == 1);
  }
  SUBCASE("threshold above the max value yields an empty mask") {
    seg::InferenceConfig cfg;
    cfg.normalization = seg::Normalization::none;
    cfg.map_threshold = 2.0;
    auto r = seg::threshold_map(map, cfg);
    for (auto v : r.mask.labels) CHECK(v == 0);
  }
  SUBCASE("raising the threshold never adds positive voxels") {
    seg::InferenceConfig cfg;
    cfg.normalization = seg::Normalization::none;
    std::size_t prev = map.values.size() + 1;
    for (double t = 0.0; t <= 1.6; t += 0.1) {
      cfg.map_threshold = t;
      auto r = seg::threshold_map(map, cfg);
      std::size_t on = 0;
      for (auto v : r.mask.labels) on += v;
      CHECK(on <= prev);
      prev = on;
    }
  }
  SUBCASE("an all-zero map with max normalization warns and stays empty") {
    data::ProbabilityMap zero({2, 2, 2});
    seg::InferenceConfig cfg;
    cfg.normalization = seg::Normalization::max;
    auto r = seg::threshold_map(zero, cfg);
    CHECK(r.all_zero_warning);
    for (auto v : r.mask.labels) CHECK(v == 0);
  }
  SUBCASE("visit_count normalization divides by per-voxel visits") {
    seg::InferenceConfig cfg;
    cfg.normalization = seg::Normalization::visit_count;
    cfg.map_threshold = 0.5;
    std::vector<std::uint32_t> visits(map.values.size(), 2);
    visits[0] = 0;  // unvisited voxels stay raw (zero)
    auto r = seg::threshold_map(map, cfg, &visits);
    // value/2 >= 0.5 -> raw value >= 1.0 -> indices 10..15
    for (std::size_t i = 0; i < map.values.size(); ++i)
      CHECK(r.mask.labels[i] == (i >= 10 ? 1 : 0));
    CHECK_THROWS_AS(seg::threshold_map(map, cfg, nullptr), data::parameter_error);
  }
}

TEST_CASE("dice") {
  const Dims3 d{10, 10, 1};
  data::MaskVolume truth(d), pred(d);

  SUBCASE("identical non-empty masks score 1") {
    truth.labels[3] = 2;
    pred.labels[3] = 1;
    CHECK(seg::dice(pred, truth) == 1.0);
  }
  SUBCASE("disjoint non-empty masks score 0") {
    truth.labels[3] = 2;
    pred.labels[7] = 1;
    CHECK(seg::dice(pred, truth) == 0.0);
  }
  SUBCASE("|P|=|T|=common size with half overlap scores 0.5") {
    data::MaskVolume t2({20, 10, 1}), p2({20, 10, 1});
    for (int i = 0; i < 100; ++i) t2.labels[i] = 2;        // truth 0..99
    for (int i = 50; i < 150; ++i) p2.labels[i] = 1;       // pred 50..149
    CHECK(seg::dice(p2, t2) == 0.5);
  }
  SUBCASE("both empty scores 1") {
    CHECK(seg::dice(pred, truth) == 1.0);
  }
  SUBCASE("truth class 1 (organ) does not count as foreground") {
    std::fill(truth.labels.begin(), truth.labels.end(), 1);
    CHECK(seg::dice(pred, truth) == 1.0);  // no class-2 voxels, empty prediction
  }
  SUBCASE("dims must match") {
    data::MaskVolume other({5, 5, 1});
    CHECK_THROWS_AS(seg::dice(other, truth), data::parameter_error);
  }
}

TEST_CASE("miou") {
  SUBCASE("perfect prediction scores 1") {
    data::MaskVolume t({4, 1, 1}), p({4, 1, 1});
    t.labels = {0, 2, 2, 0};
    p.labels = {0, 1, 1, 0};
    CHECK(seg::miou(p, t) == 1.0);
  }
  SUBCASE("all-positive prediction on half-positive 2-voxel truth scores 0.25") {
    data::MaskVolume t({2, 1, 1}), p({2, 1, 1});
    t.labels = {2, 0};
    p.labels = {1, 1};
    CHECK(seg::miou(p, t) == 0.25);  // mean(iou_pos 0.5, iou_neg 0)
  }
  SUBCASE("IoU = D/(2-D) holds per class on random masks") {
    auto rng = substream(5, "miou");
    std::uniform_int_distribution<int> coin(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
      data::MaskVolume t({8, 8, 2}), p({8, 8, 2});
      for (auto& v : t.labels) v = coin(rng) ? 2 : 0;
      for (auto& v : p.labels) v = coin(rng);
      const double d = seg::dice(p, t);
      // tumour-class IoU extracted from miou bookkeeping
      std::size_t inter = 0, uni = 0;
      for (std::size_t i = 0; i < t.labels.size(); ++i) {
        const bool pp = p.labels[i] != 0, tt = t.labels[i] == 2;
        inter += pp && tt;
        uni += pp || tt;
      }
      const double iou = uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
      CHECK(iou == doctest::Approx(d / (2.0 - d)).epsilon(1e-9));
    }
  }
}

TEST_CASE("trajectory log JSONL round-trip") {
  testutil::TmpDir tmp;
  std::vector<seg::StepLog> log = {{0, {12, 12, 6}, 0.25f},
                                   {1, {16, 12, 6}, 0.5f},
                                   {2, {16, 16, 6}, 0.75f}};
  const auto path = tmp.file("traj.jsonl");
  seg::write_trajectory_log(path, log);
  auto r = seg::read_trajectory_log(path);
  REQUIRE(r.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r[i].t == log[i].t);
    CHECK(r[i].corner == log[i].corner);
    CHECK(r[i].score == log[i].score);
  }
}
