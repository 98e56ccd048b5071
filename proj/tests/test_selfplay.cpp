#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <random>

#include "spars/rng.hpp"
#include "spars/selfplay.hpp"
#include "spars/synthetic.hpp"

using namespace spars;

namespace {

data::Case small_case(std::uint64_t seed = 3) {
  auto c = data::generate_synthetic_case(seed, {16, 16, 16}, 1, 1);
  c.id = "c";
  return c;
}

// Scorer independent of any network: brighter windows score higher.
float mean_voxel(const data::Case& c, const env::WindowSpec& w) {
  auto crop = env::crop_window(c, w);
  float s = 0;
  for (float v : crop.voxels) s += v;
  return s / static_cast<float>(crop.voxels.size());
}

rl::RLConfig tiny_config() {
  rl::RLConfig cfg;
  cfg.T = 8;
  cfg.window_extents = {8, 8, 4};
  cfg.step_distance = 2;
  cfg.seed = 0;
  return cfg;
}

rl::PolicyNet tiny_policy(std::uint64_t seed = 0) {
  return rl::make_policy({8, 8, 4}, seed);
}

void force_uniform_logits(rl::PolicyNet& p) {
  auto& w = p.params.at("fc4.weight")->value.data;
  auto& b = p.params.at("fc4.bias")->value.data;
  std::fill(w.begin(), w.end(), 0.0f);
  std::fill(b.begin(), b.end(), 0.0f);
}

}  // namespace

TEST_CASE("discounted returns") {
  SUBCASE("rewards (1,-1,1) at gamma=0.9 give G_0 = 0.91") {
    const auto g = rl::compute_returns(std::vector<int>{1, -1, 1}, 0.9);
    CHECK(g[0] == doctest::Approx(0.91).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(-0.1).epsilon(1e-12));
    CHECK(g[2] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("recursion G_t = R_t + gamma*G_{t+1} holds exactly for 1e3 random sequences") {
    auto rng = substream(21, "returns");
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_real_distribution<double> g_dist(0.01, 0.99);
    std::uniform_int_distribution<int> len(1, 40);
    for (int trial = 0; trial < 1000; ++trial) {
      const double gamma = g_dist(rng);
      std::vector<int> rewards(len(rng));
      for (auto& r : rewards) r = coin(rng) ? 1 : -1;
      const auto g = rl::compute_returns(rewards, gamma);
      REQUIRE(g.size() == rewards.size());
      for (std::size_t t = 0; t + 1 < g.size(); ++t)
        CHECK(g[t] == rewards[t] + gamma * g[t + 1]);
      CHECK(g.back() == static_cast<double>(rewards.back()));
    }
  }
  SUBCASE("gamma=0 reduces returns to the rewards") {
    const auto g = rl::compute_returns(std::vector<int>{1, -1, -1, 1}, 0.0);
    CHECK(g == std::vector<double>{1.0, -1.0, -1.0, 1.0});
  }
}

TEST_CASE("action sampling") {
  auto c = small_case();
  auto policy = tiny_policy();
  force_uniform_logits(policy);
  auto state = env::initial_state(c, {8, 8, 4});
  state.case_id = c.id;

  SUBCASE("uniform logits sample each action about 1/6 of the time (chi-squared)") {
    auto rng = substream(31, "sample");
    std::array<int, 6> counts{};
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      auto [a, lp] = rl::sample_action(policy, c, state, rng);
      ++counts[a.index];
      CHECK(lp == doctest::Approx(std::log(1.0 / 6.0)).epsilon(1e-5));
    }
    const double expect = draws / 6.0;
    double chi2 = 0;
    for (int k = 0; k < 6; ++k)
      chi2 += (counts[k] - expect) * (counts[k] - expect) / expect;
    CHECK(chi2 < 15.086);  // chi-squared df=5 at p=0.01
  }
  SUBCASE("a +20 logit saturates the choice") {
    policy.params.at("fc4.bias")->value.data[3] = 20.0f;
    auto rng = substream(32, "sample");
    int hits = 0;
    const int draws = 3000;
    for (int i = 0; i < draws; ++i) {
      auto [a, lp] = rl::sample_action(policy, c, state, rng);
      hits += (a.index == 3);
    }
    CHECK(hits == draws);  // p(other) ~ 5e-9 per draw
  }
  SUBCASE("same rng seed gives the same action sequence") {
    auto r1 = substream(33, "sample");
    auto r2 = substream(33, "sample");
    for (int i = 0; i < 50; ++i) {
      auto [a1, l1] = rl::sample_action(policy, c, state, r1);
      auto [a2, l2] = rl::sample_action(policy, c, state, r2);
      CHECK(a1.index == a2.index);
      CHECK(l1 == l2);
    }
  }
}

TEST_CASE("self-play episode collection") {
  auto c = small_case();
  auto policy = tiny_policy();
  auto cfg = tiny_config();

  SUBCASE("T=8 yields 9 recorded triplets in both trajectories") {
    auto rng = substream(41, "episode");
    auto [m, n] = rl::collect_selfplay_episode(policy, c, mean_voxel, cfg, rng);
    CHECK(m.steps.size() == 9);
    CHECK(n.steps.size() == 9);
  }
  SUBCASE("tau_n rewards are the elementwise negation of tau_m rewards") {
    auto rng = substream(42, "episode");
    auto [m, n] = rl::collect_selfplay_episode(policy, c, mean_voxel, cfg, rng);
    for (std::size_t t = 0; t < m.steps.size(); ++t) {
      CHECK(n.steps[t].reward == -m.steps[t].reward);
      CHECK(std::abs(m.steps[t].reward) == 1);
    }
  }
  SUBCASE("same seed reproduces both trajectories") {
    auto r1 = substream(43, "episode");
    auto r2 = substream(43, "episode");
    auto [m1, n1] = rl::collect_selfplay_episode(policy, c, mean_voxel, cfg, r1);
    auto [m2, n2] = rl::collect_selfplay_episode(policy, c, mean_voxel, cfg, r2);
    for (std::size_t t = 0; t < m1.steps.size(); ++t) {
      CHECK(m1.steps[t].window == m2.steps[t].window);
      CHECK(m1.steps[t].action == m2.steps[t].action);
      CHECK(m1.steps[t].reward == m2.steps[t].reward);
      CHECK(n1.steps[t].reward == n2.steps[t].reward);
    }
  }
  SUBCASE("windows along the trajectory obey the step geometry") {
    auto rng = substream(44, "episode");
    auto [m, n] = rl::collect_selfplay_episode(policy, c, mean_voxel, cfg, rng);
    for (std::size_t t = 0; t + 1 < m.steps.size(); ++t) {
      const auto& a = m.steps[t].window.corner;
      const auto& b = m.steps[t + 1].window.corner;
      const int moved = std::abs(a.x - b.x) + std::abs(a.y - b.y) + std::abs(a.z - b.z);
      CHECK(moved <= cfg.step_distance);  // clamping may shorten a step to 0
    }
  }
}

TEST_CASE("policy update") {
  auto c = small_case();
  auto cfg = tiny_config();

  SUBCASE("zero-advantage batch with zero entropy weight leaves parameters unchanged") {
    auto policy = tiny_policy(7);
    rl::Trajectory tau;
    tau.episode_case = &c;
    auto rng = substream(51, "update");
    auto state = env::initial_state(c, cfg.window_extents);
    state.case_id = c.id;
    for (int t = 0; t <= cfg.T; ++t) {
      auto [a, lp] = rl::sample_action(policy, c, state, rng);
      tau.steps.push_back({state.window, a.index, 0, lp});  // all-zero rewards
      state = env::apply_action(state, c.volume.dims, a, cfg.step_distance);
    }
    std::vector<std::vector<float>> before;
    for (const auto& [name, p] : policy.params) before.push_back(p->value.data);

    rl::RLConfig zcfg = cfg;
    zcfg.entropy_weight = 0.0f;
    ad::Adam<float> opt(zcfg.learning_rate);
    rl::policy_update(policy, {tau}, zcfg, opt);

    std::size_t i = 0;
    for (const auto& [name, p] : policy.params) CHECK(p->value.data == before[i++]);
  }

  SUBCASE("the surrogate on the training batch does not decrease across the step") {
    auto policy = tiny_policy(8);
    auto rng = substream(52, "update");
    std::vector<rl::Trajectory> batch;
    for (int e = 0; e < 4; ++e) {
      auto [m, n] = rl::collect_selfplay_episode(policy, c, mean_voxel, cfg, rng);
      batch.push_back(std::move(m));
    }
    rl::RLConfig ucfg = cfg;
    ucfg.learning_rate = 1e-4f;
    ucfg.entropy_weight = 0.0f;
    ad::Adam<float> opt(ucfg.learning_rate);
    const auto stats = rl::policy_update(policy, batch, ucfg, opt);
    const double after = rl::evaluate_surrogate(policy, batch, ucfg);
    CHECK(after >= stats.surrogate_before - 1e-6);
  }

  SUBCASE("empty batches are rejected") {
    auto policy = tiny_policy(9);
    ad::Adam<float> opt(1e-3f);
    CHECK_THROWS_AS(rl::policy_update(policy, {}, cfg, opt), data::parameter_error);
  }

  SUBCASE("config validation") {
    rl::RLConfig bad = cfg;
    bad.gamma = 1.5;
    CHECK_THROWS_AS(bad.validate(), data::parameter_error);
    bad = cfg;
    bad.T = 0;
    CHECK_THROWS_AS(bad.validate(), data::parameter_error);
  }
}

TEST_CASE("train_policy smoke run and log") {
  auto c = small_case();
  auto cfg = tiny_config();
  cfg.updates = 2;
  cfg.episodes_per_update = 2;
  auto policy = tiny_policy(10);
  const auto log = rl::train_policy(policy, {c}, mean_voxel, cfg);
  REQUIRE(log.size() == 2);
  for (const auto& row : log) {
    CHECK(std::isfinite(row.policy_loss));
    CHECK(std::isfinite(row.entropy));
    CHECK(row.mean_return_m == doctest::Approx(-row.mean_return_n).epsilon(1e-9));
  }

  // identical seed and initial policy reproduce the log bit-exactly
  auto policy2 = tiny_policy(10);
  const auto log2 = rl::train_policy(policy2, {c}, mean_voxel, cfg);
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].mean_return_m == log2[i].mean_return_m);
    CHECK(log[i].policy_loss == log2[i].policy_loss);
  }
}
