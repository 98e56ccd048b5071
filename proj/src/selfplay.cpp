#include "spars/selfplay.hpp"

#include <cmath>
#include <fstream>

#include "spars/rng.hpp"

namespace spars::rl {

using ad::Tensor;

PolicyNet make_policy(Dims3 input_dims, std::uint64_t seed) {
  return PolicyNet(input_dims, env::kActionCount, substream(seed, "policy-init"));
}

namespace {

// Logits for one window crop; eval mode, no tape.
std::vector<float> action_logits(PolicyNet& policy, const data::Case& c,
                                 const env::WindowSpec& window) {
  ad::NoGradGuard no_grad;
  auto in = clf::to_network_input(env::crop_window(c, window), policy.input_dims);
  const auto& s = in.shape;
  Tensor<float> batched({1, 1, s[1], s[2], s[3]}, std::move(in.data));
  auto logits = policy.forward_logits(ad::make_var(std::move(batched)), nn::BNMode::eval);
  return logits->value.data;
}

std::vector<double> softmax_probs(const std::vector<float>& logits) {
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(logits.size());
  double sum = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(static_cast<double>(logits[k]) - mx);
    sum += p[k];
  }
  for (auto& v : p) v /= sum;
  return p;
}

struct FlatBatch {
  std::vector<const data::Case*> cases;
  std::vector<env::WindowSpec> windows;
  std::vector<int> actions;
  std::vector<float> logp_old;
  std::vector<float> advantage;
};

FlatBatch flatten(const std::vector<Trajectory>& trajectories, double gamma) {
  FlatBatch b;
  for (const auto& traj : trajectories) {
    const auto returns = compute_returns(traj, gamma);
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      b.cases.push_back(traj.episode_case);
      b.windows.push_back(traj.steps[t].window);
      b.actions.push_back(traj.steps[t].action);
      b.logp_old.push_back(traj.steps[t].log_prob);
      b.advantage.push_back(static_cast<float>(returns[t]));
    }
  }
  double mean = 0;
  for (float a : b.advantage) mean += a;
  mean /= static_cast<double>(b.advantage.size());
  for (auto& a : b.advantage) a -= static_cast<float>(mean);
  return b;
}

Tensor<float> stack_inputs(PolicyNet& policy, const FlatBatch& b, std::size_t lo,
                           std::size_t hi) {
  const Dims3 d = policy.input_dims;
  Tensor<float> out({static_cast<int>(hi - lo), 1, d.z, d.y, d.x});
  const std::size_t per = d.count();
  for (std::size_t i = lo; i < hi; ++i) {
    auto in = clf::to_network_input(env::crop_window(*b.cases[i], b.windows[i]), d);
    std::copy(in.data.begin(), in.data.end(), out.data.begin() + (i - lo) * per);
  }
  return out;
}

}  // namespace

std::pair<env::Action, float> sample_action(PolicyNet& policy, const data::Case& c,
                                            const env::EnvState& state,
                                            std::mt19937_64& rng) {
  const auto logits = action_logits(policy, c, state.window);
  const auto probs = softmax_probs(logits);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double acc = 0;
  int chosen = static_cast<int>(probs.size()) - 1;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) {
      chosen = static_cast<int>(k);
      break;
    }
  }
  const float lp = static_cast<float>(std::log(std::max(probs[chosen], 1e-30)));
  return {env::Action{chosen}, lp};
}

std::pair<Trajectory, Trajectory> collect_selfplay_episode(
    PolicyNet& policy, const data::Case& c, const env::WindowScorer& scorer,
    const RLConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  Trajectory tau_m, tau_n;
  tau_m.episode_case = &c;
  tau_n.episode_case = &c;

  auto s_m = env::initial_state(c, cfg.window_extents, env::StartMode::random, rng);
  auto s_n = env::initial_state(c, cfg.window_extents, env::StartMode::random, rng);

  for (int t = 0; t <= cfg.T; ++t) {
    auto [a_m, lp_m] = sample_action(policy, c, s_m, rng);
    auto [a_n, lp_n] = sample_action(policy, c, s_n, rng);
    const auto rp = env::compute_reward_pair(scorer, c, s_m, s_n);
    tau_m.steps.push_back({s_m.window, a_m.index, rp.r_m, lp_m});
    tau_n.steps.push_back({s_n.window, a_n.index, rp.r_n, lp_n});
    if (t < cfg.T) {
      s_m = env::apply_action(s_m, c.volume.dims, a_m, cfg.step_distance);
      s_n = env::apply_action(s_n, c.volume.dims, a_n, cfg.step_distance);
    }
  }
  return {std::move(tau_m), std::move(tau_n)};
}

std::vector<double> compute_returns(const std::vector<int>& rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double next = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    next = rewards[i] + gamma * next;
    g[i] = next;
  }
  return g;
}

std::vector<double> compute_returns(const Trajectory& traj, double gamma) {
  std::vector<int> rewards;
  rewards.reserve(traj.steps.size());
  for (const auto& s : traj.steps) rewards.push_back(s.reward);
  return compute_returns(rewards, gamma);
}

UpdateStats policy_update(PolicyNet& policy, const std::vector<Trajectory>& trajectories,
                          const RLConfig& cfg, ad::Adam<float>& opt) {
  if (trajectories.empty())
    throw data::parameter_error("policy_update: need at least one trajectory");
  const FlatBatch batch = flatten(trajectories, cfg.gamma);
  const std::size_t total = batch.windows.size();
  const std::size_t chunk = std::max(1, cfg.update_minibatch);

  policy.params.zero_grad();
  UpdateStats stats;
  for (std::size_t lo = 0; lo < total; lo += chunk) {
    const std::size_t hi = std::min(total, lo + chunk);
    const float weight = static_cast<float>(hi - lo) / static_cast<float>(total);

    auto x = ad::make_var(stack_inputs(policy, batch, lo, hi));
    auto logits = policy.forward_logits(x, nn::BNMode::eval);
    std::vector<int> actions(batch.actions.begin() + lo, batch.actions.begin() + hi);
    std::vector<float> lp_old(batch.logp_old.begin() + lo, batch.logp_old.begin() + hi);
    std::vector<float> adv(batch.advantage.begin() + lo, batch.advantage.begin() + hi);

    auto lp_new = ad::log_prob_of(logits, actions);
    auto surrogate = ad::clipped_surrogate(lp_new, lp_old, adv, cfg.clip_eps);
    auto entropy = ad::mean(ad::entropy_of_logits(logits));
    auto objective = ad::add(surrogate, ad::scale(entropy, cfg.entropy_weight));
    auto loss = ad::scale(objective, -weight);

    if (!std::isfinite(loss->value.data[0]))
      throw std::runtime_error(
          "policy_update: non-finite loss (surrogate " +
          std::to_string(surrogate->value.data[0]) + ", entropy " +
          std::to_string(entropy->value.data[0]) + "); update aborted");

    stats.surrogate_before += weight * surrogate->value.data[0];
    stats.entropy += weight * entropy->value.data[0];
    ad::backward(loss);
  }
  stats.policy_loss = -(stats.surrogate_before + cfg.entropy_weight * stats.entropy);
  opt.step(policy.params);
  return stats;
}

double evaluate_surrogate(PolicyNet& policy, const std::vector<Trajectory>& trajectories,
                          const RLConfig& cfg) {
  ad::NoGradGuard no_grad;
  const FlatBatch batch = flatten(trajectories, cfg.gamma);
  const std::size_t total = batch.windows.size();
  const std::size_t chunk = std::max(1, cfg.update_minibatch);
  double value = 0.0;
  for (std::size_t lo = 0; lo < total; lo += chunk) {
    const std::size_t hi = std::min(total, lo + chunk);
    const double weight = static_cast<double>(hi - lo) / static_cast<double>(total);
    auto x = ad::make_var(stack_inputs(policy, batch, lo, hi));
    auto logits = policy.forward_logits(x, nn::BNMode::eval);
    std::vector<int> actions(batch.actions.begin() + lo, batch.actions.begin() + hi);
    std::vector<float> lp_old(batch.logp_old.begin() + lo, batch.logp_old.begin() + hi);
    std::vector<float> adv(batch.advantage.begin() + lo, batch.advantage.begin() + hi);
    auto surrogate = ad::clipped_surrogate(ad::log_prob_of(logits, actions), lp_old,
                                           adv, cfg.clip_eps);
    value += weight * surrogate->value.data[0];
  }
  return value;
}

std::vector<TrainLogRow> train_policy(PolicyNet& policy,
                                      const std::vector<data::Case>& dev_cases,
                                      const env::WindowScorer& scorer,
                                      const RLConfig& cfg) {
  cfg.validate();
  if (dev_cases.empty())
    throw data::parameter_error("train_policy: no development cases");
  ad::Adam<float> opt(cfg.learning_rate);
  auto rng = substream(cfg.seed, "policy-train");
  std::uniform_int_distribution<std::size_t> pick(0, dev_cases.size() - 1);

  std::vector<TrainLogRow> log;
  for (int u = 0; u < cfg.updates; ++u) {
    std::vector<Trajectory> tau_ms;
    double ret_m = 0.0, ret_n = 0.0;
    for (int e = 0; e < cfg.episodes_per_update; ++e) {
      const auto& c = dev_cases[pick(rng)];
      auto [tau_m, tau_n] = collect_selfplay_episode(policy, c, scorer, cfg, rng);
      ret_m += compute_returns(tau_m, cfg.gamma)[0];
      ret_n += compute_returns(tau_n, cfg.gamma)[0];
      tau_ms.push_back(std::move(tau_m));
    }
    const auto stats = policy_update(policy, tau_ms, cfg, opt);
    TrainLogRow row;
    row.update = u;
    row.mean_return_m = ret_m / cfg.episodes_per_update;
    row.mean_return_n = ret_n / cfg.episodes_per_update;
    row.policy_loss = stats.policy_loss;
    row.entropy = stats.entropy;
    log.push_back(row);
  }
  return log;
}

void write_train_log(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream os(path);
  if (!os) throw data::format_error(path + ": cannot open for writing");
  os << "update,mean_return_m,mean_return_n,policy_loss,entropy\n";
  for (const auto& r : rows)
    os << r.update << "," << r.mean_return_m << "," << r.mean_return_n << ","
       << r.policy_loss << "," << r.entropy << "\n";
}

}  // namespace spars::rl
