// harness.hpp — experiment configuration, the end-to-end pipeline
// (generate -> split -> train classifier -> train policy -> segment ->
// metrics), ablation sweeps, and metric persistence.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spars/classifier.hpp"
#include "spars/segmenter.hpp"
#include "spars/selfplay.hpp"
#include "spars/synthetic.hpp"

namespace spars::harness {

struct config_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string stage_name, const std::string& msg)
      : std::runtime_error(stage_name + ": " + msg), stage(std::move(stage_name)) {}
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  std::string mode = "full";  // full | inference

  // data generation
  int case_count = 100;
  Dims3 dims{64, 64, 32};
  data::GenParams gen;  // dims mirrored in apply()
  std::pair<int, int> split_ratio{3, 2};

  clf::TrainConfig train;
  rl::RLConfig rl;
  bool rl_positive_only = true;  // train the policy on label-1 development cases

  seg::InferenceConfig inference;
  bool threshold_search = true;       // dev-split Dice grid search for map_threshold
  int threshold_search_cases = 12;    // dev cases sampled for the search
  bool classifier_gate = true;        // whole-volume presence < 0.5 -> empty mask

  // ablation
  std::string axis = "none";  // none | train_size | window_size | rho
  std::vector<std::string> axis_values;
  int seeds_per_point = 3;

  ExperimentConfig();

  // flat dotted-key overrides, e.g. set("rl.updates", "80")
  void set(const std::string& key, const std::string& value);
  static ExperimentConfig from_file(const std::string& path);
  void validate() const;
};

struct CaseMetrics {
  std::string axis_value = "-";
  std::uint64_t seed = 0;
  std::string id;
  double dice = 0.0;
  double miou = 0.0;
};

struct MetricsRecord {
  std::vector<CaseMetrics> per_case;
  double mean_dice = 0.0, std_dice = 0.0;
  double mean_miou = 0.0, std_miou = 0.0;
  clf::ClassifierMetrics classifier;
  double selected_threshold = 0.0;
  std::map<std::string, double> timings_sec;
};

double mean_of(const std::vector<double>& v);
double population_std(const std::vector<double>& v);

// Full pipeline; every artifact lands under cfg.out_dir. Pure function of
// (config, seed) within one build.
MetricsRecord run_pipeline(const ExperimentConfig& cfg);

struct AblationRow {
  std::string axis_value;
  double mean = 0.0;
  double stddev = 0.0;
  int n = 0;
  std::string metric;  // "dice" or "accuracy"
  std::string error;   // non-empty when the point failed
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<CaseMetrics> detail;  // per-case rows across all points
};

AblationResult run_ablation(const ExperimentConfig& cfg);

// Disk-based single stages backing the CLI subcommands; each reads its
// inputs from cfg.out_dir and writes its artifacts there.
void run_generate(const ExperimentConfig& cfg);
void run_split(const ExperimentConfig& cfg);
void run_train_classifier(const ExperimentConfig& cfg);
void run_train_policy(const ExperimentConfig& cfg);
MetricsRecord run_segment(const ExperimentConfig& cfg);
MetricsRecord run_evaluate(const ExperimentConfig& cfg);
void run_report(const ExperimentConfig& cfg);

// CSV `axis_value,seed,case_id,dice,miou` plus aggregate JSON {mean,std,n}.
void export_metrics(const std::vector<CaseMetrics>& records, const std::string& csv_path,
                    const std::string& json_path);

void write_metrics_record(const MetricsRecord& record, const std::string& dir);
void write_ablation_table(const AblationResult& result, const std::string& dir);

}  // namespace spars::harness
