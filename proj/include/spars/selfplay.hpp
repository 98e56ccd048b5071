// selfplay.hpp — two shared-parameter stochastic policies compete on the same
// case; trajectories from pi_m drive a clipped-surrogate policy-gradient
// update. Because theta_m = theta_n, the single update serves both policies.
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "spars/classifier.hpp"
#include "spars/environment.hpp"
#include "spars/nn.hpp"

namespace spars::rl {

using PolicyNet = nn::TrunkNet<float>;

struct RLConfig {
  int T = 32;                 // steps per episode; T+1 recorded triplets
  int episodes_per_update = 16;
  int updates = 100;
  double gamma = 0.99;
  float clip_eps = 0.2f;
  float entropy_weight = 0.01f;
  float learning_rate = 3e-4f;
  std::uint64_t seed = 0;
  Dims3 window_extents{32, 32, 16};
  Dims3 input_dims{16, 16, 8};  // window crops are resized to this for the net
  int step_distance = 4;
  int update_minibatch = 32;  // states per forward chunk inside one update

  void validate() const {
    if (T <= 0 || episodes_per_update <= 0 || updates <= 0)
      throw data::parameter_error("RLConfig: counts must be positive");
    if (gamma <= 0.0 || gamma >= 1.0)
      throw data::parameter_error("RLConfig: gamma must be in (0,1)");
  }
};

struct TrajectoryStep {
  env::WindowSpec window;
  int action = 0;
  int reward = 0;       // +1 / -1
  float log_prob = 0;   // log pi(a|s) recorded at collection time
};

struct Trajectory {
  const data::Case* episode_case = nullptr;
  std::vector<TrajectoryStep> steps;  // length T+1
};

PolicyNet make_policy(Dims3 input_dims, std::uint64_t seed);

// Draw an action from the softmax categorical over 6 logits computed on the
// resized window crop.
std::pair<env::Action, float> sample_action(PolicyNet& policy, const data::Case& c,
                                            const env::EnvState& state,
                                            std::mt19937_64& rng);

// Both agents start from independent random states and step T times; the
// comparative reward fills both trajectories at every step.
std::pair<Trajectory, Trajectory> collect_selfplay_episode(
    PolicyNet& policy, const data::Case& c, const env::WindowScorer& scorer,
    const RLConfig& cfg, std::mt19937_64& rng);

// Discounted returns-to-go: G_t = R_t + gamma * G_{t+1}.
std::vector<double> compute_returns(const std::vector<int>& rewards, double gamma);
std::vector<double> compute_returns(const Trajectory& traj, double gamma);

struct UpdateStats {
  double surrogate_before = 0.0;  // mean clipped surrogate on the batch, pre-step
  double policy_loss = 0.0;       // negated objective actually descended
  double entropy = 0.0;           // mean action entropy on the batch
};

// One clipped-surrogate update from pi_m trajectories. Advantages are
// returns-to-go minus their batch mean. Aborts on non-finite loss.
UpdateStats policy_update(PolicyNet& policy, const std::vector<Trajectory>& trajectories,
                          const RLConfig& cfg, ad::Adam<float>& opt);

// Mean clipped surrogate of a trajectory batch under the current parameters.
double evaluate_surrogate(PolicyNet& policy, const std::vector<Trajectory>& trajectories,
                          const RLConfig& cfg);

struct TrainLogRow {
  int update = 0;
  double mean_return_m = 0.0;
  double mean_return_n = 0.0;
  double policy_loss = 0.0;
  double entropy = 0.0;
};

// Full training loop: collect-then-update per iteration over development cases.
std::vector<TrainLogRow> train_policy(PolicyNet& policy,
                                      const std::vector<data::Case>& dev_cases,
                                      const env::WindowScorer& scorer,
                                      const RLConfig& cfg);

void write_train_log(const std::string& path, const std::vector<TrainLogRow>& rows);

}  // namespace spars::rl
