// classifier.hpp — the object-presence classifier f(.;w): a full image or a
// resized window crop in, presence score in [0,1] out. Trained with BCE on
// image-level labels only.
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "spars/environment.hpp"
#include "spars/nn.hpp"
#include "spars/synthetic.hpp"

namespace spars::clf {

using ClassifierNet = nn::TrunkNet<float>;

struct TrainConfig {
  int epochs = 100;
  int batch_size = 8;
  float learning_rate = 3e-4f;
  float weight_decay = 1e-3f;  // decoupled L2, applied by the optimizer
  float label_smoothing = 0.05f;  // targets become [eps, 1-eps]
  std::uint64_t seed = 0;
  int n_samples = 0;  // 0 = use all development cases; ablation axis otherwise
  Dims3 input_dims{32, 32, 16};
};

struct ClassifierMetrics {
  double accuracy = 0.0;
  std::optional<double> sensitivity;  // undefined on single-class sets
  std::optional<double> specificity;
  std::optional<double> auc;
};

struct TrainResult {
  ClassifierNet net;
  std::vector<double> loss_curve;  // per-epoch mean BCE
};

// Volume -> network input [1,D,H,W], trilinear-resized to input_dims.
ad::Tensor<float> to_network_input(const data::Volume& region, Dims3 input_dims);

ClassifierNet make_classifier(Dims3 input_dims, std::uint64_t seed);

// Minibatch descent on full images resized to the network input resolution.
// Minibatches are class-balanced by resampling. Throws if the development
// set holds a single class.
TrainResult train_classifier(const std::vector<data::Case>& cases,
                             const TrainConfig& cfg);

// Eval-mode forward pass on a resized region; deterministic.
float predict_presence(ClassifierNet& net, const data::Volume& region);

// Metrics at decision threshold 0.5 (score >= 0.5 counts positive);
// AUC by trapezoidal ROC over unique score cutoffs.
ClassifierMetrics evaluate_classifier(ClassifierNet& net,
                                      const std::vector<data::Case>& cases);
ClassifierMetrics metrics_from_scores(const std::vector<float>& scores,
                                      const std::vector<int>& labels);

// Window scorer for the environment: crop -> resize -> presence score.
// The net must outlive the returned callable.
env::WindowScorer make_presence_scorer(ClassifierNet& net);

}  // namespace spars::clf
