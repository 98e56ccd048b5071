#include "spars/classifier.hpp"

#include <algorithm>
#include <cmath>

namespace spars::clf {

using ad::Tensor;
using ad::Var;

ad::Tensor<float> to_network_input(const data::Volume& region, Dims3 input_dims) {
  if (region.voxels.empty())
    throw data::parameter_error("predict_presence: zero-sized region");
  // Volume storage is x-fastest, which is exactly [z][y][x] row-major.
  Tensor<float> t({1, region.dims.z, region.dims.y, region.dims.x}, region.voxels);
  // Every region passes through a half-resolution capture grid before the
  // final resize. Whole volumes and window crops arrive with different
  // resampling factors; without a shared bottleneck the net keys on the
  // interpolation texture instead of content, and crop scores saturate.
  const Dims3 cap{std::max(1, input_dims.x / 2), std::max(1, input_dims.y / 2),
                  std::max(1, input_dims.z / 2)};
  auto captured = ad::trilinear_resize(t, cap.z, cap.y, cap.x);
  return ad::trilinear_resize(captured, input_dims.z, input_dims.y, input_dims.x);
}

ClassifierNet make_classifier(Dims3 input_dims, std::uint64_t seed) {
  return ClassifierNet(input_dims, 1, substream(seed, "classifier-init"));
}

namespace {

// Stack per-case inputs [1,D,H,W] into a batch [B,1,D,H,W].
Tensor<float> stack_batch(const std::vector<Tensor<float>>& inputs,
                          const std::vector<int>& indices) {
  const auto& s = inputs[indices[0]].shape;
  Tensor<float> out({static_cast<int>(indices.size()), 1, s[1], s[2], s[3]});
  const std::size_t per = inputs[indices[0]].numel();
  for (std::size_t b = 0; b < indices.size(); ++b)
    std::copy(inputs[indices[b]].data.begin(), inputs[indices[b]].data.end(),
              out.data.begin() + b * per);
  return out;
}

}  // namespace

TrainResult train_classifier(const std::vector<data::Case>& cases,
                             const TrainConfig& cfg) {
  if (cfg.epochs <= 0 || cfg.batch_size <= 0 || cfg.learning_rate <= 0)
    throw data::parameter_error("train_classifier: config values must be positive");

  std::vector<const data::Case*> pool;
  for (const auto& c : cases) pool.push_back(&c);
  if (cfg.n_samples > 0 && cfg.n_samples < static_cast<int>(pool.size()))
    pool.resize(cfg.n_samples);

  std::vector<int> positives, negatives;
  std::vector<Tensor<float>> inputs;
  std::vector<float> labels;
  inputs.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    inputs.push_back(to_network_input(pool[i]->volume, cfg.input_dims));
    labels.push_back(static_cast<float>(pool[i]->label));
    (pool[i]->label ? positives : negatives).push_back(static_cast<int>(i));
  }
  if (positives.empty() || negatives.empty())
    throw data::parameter_error(
        "train_classifier: development set holds a single class; BCE is degenerate");

  TrainResult result{make_classifier(cfg.input_dims, cfg.seed), {}};
  ad::Adam<float> opt(cfg.learning_rate, 0.9f, 0.999f, 1e-8f, cfg.weight_decay);
  auto rng = substream(cfg.seed, "classifier-train");

  const int steps_per_epoch =
      std::max<int>(1, (static_cast<int>(pool.size()) + cfg.batch_size - 1) / cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      // class-balanced resampling: alternate draws from each pool
      std::vector<int> batch;
      std::vector<float> batch_labels;
      for (int b = 0; b < std::max(2, cfg.batch_size); ++b) {
        const auto& side = (b % 2 == 0) ? positives : negatives;
        std::uniform_int_distribution<std::size_t> pick(0, side.size() - 1);
        const int idx = side[pick(rng)];
        batch.push_back(idx);
        batch_labels.push_back(labels[idx] == 1.0f ? 1.0f - cfg.label_smoothing
                                                    : cfg.label_smoothing);
      }
      auto x = ad::make_var(stack_batch(inputs, batch));
      auto logits = result.net.forward_logits(x, nn::BNMode::train);
      auto pred = ad::sigmoid(logits);
      auto loss = ad::bce_loss(pred, batch_labels);
      result.net.params.zero_grad();
      ad::backward(loss);
      opt.step(result.net.params);
      epoch_loss += loss->value.data[0];
    }
    result.loss_curve.push_back(epoch_loss / steps_per_epoch);
  }
  return result;
}

float predict_presence(ClassifierNet& net, const data::Volume& region) {
  ad::NoGradGuard no_grad;
  auto in = to_network_input(region, net.input_dims);
  const auto& s = in.shape;
  Tensor<float> batched({1, 1, s[1], s[2], s[3]}, std::move(in.data));
  auto logits = net.forward_logits(ad::make_var(std::move(batched)), nn::BNMode::eval);
  auto score = ad::sigmoid(logits);
  return score->value.data[0];
}

ClassifierMetrics metrics_from_scores(const std::vector<float>& scores,
                                      const std::vector<int>& labels) {
  int tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= 0.5f;
    if (labels[i] == 1)
      pred ? ++tp : ++fn;
    else
      pred ? ++fp : ++tn;
  }
  ClassifierMetrics m;
  const int n = tp + tn + fp + fn;
  m.accuracy = n > 0 ? static_cast<double>(tp + tn) / n : 0.0;
  if (tp + fn > 0) m.sensitivity = static_cast<double>(tp) / (tp + fn);
  if (tn + fp > 0) m.specificity = static_cast<double>(tn) / (tn + fp);

  // trapezoidal ROC
  const int pos = tp + fn, neg = tn + fp;
  if (pos > 0 && neg > 0) {
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double auc = 0.0;
    double tpr_prev = 0.0, fpr_prev = 0.0;
    int tp_c = 0, fp_c = 0;
    std::size_t i = 0;
    while (i < order.size()) {
      const float cut = scores[order[i]];
      while (i < order.size() && scores[order[i]] == cut) {
        if (labels[order[i]] == 1)
          ++tp_c;
        else
          ++fp_c;
        ++i;
      }
      const double tpr = static_cast<double>(tp_c) / pos;
      const double fpr = static_cast<double>(fp_c) / neg;
      auc += (fpr - fpr_prev) * (tpr + tpr_prev) / 2.0;
      tpr_prev = tpr;
      fpr_prev = fpr;
    }
    auc += (1.0 - fpr_prev) * (1.0 + tpr_prev) / 2.0;
    m.auc = auc;
  }
  return m;
}

ClassifierMetrics evaluate_classifier(ClassifierNet& net,
                                      const std::vector<data::Case>& cases) {
  std::vector<float> scores;
  std::vector<int> labels;
  for (const auto& c : cases) {
    scores.push_back(predict_presence(net, c.volume));
    labels.push_back(c.label);
  }
  return metrics_from_scores(scores, labels);
}

env::WindowScorer make_presence_scorer(ClassifierNet& net) {
  return [&net](const data::Case& c, const env::WindowSpec& w) {
    return predict_presence(net, env::crop_window(c, w));
  };
}

}  // namespace spars::clf
