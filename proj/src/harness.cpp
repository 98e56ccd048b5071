#include "spars/harness.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"
#include "spars/rng.hpp"

namespace spars::harness {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Dims3 parse_dims(const std::string& s) {
  Dims3 d;
  char sep1 = 0, sep2 = 0;
  std::istringstream is(s);
  if (!(is >> d.x >> sep1 >> d.y >> sep2 >> d.z) || sep1 != 'x' || sep2 != 'x')
    throw config_error("expected dims like 64x64x32, got \"" + s + "\"");
  return d;
}

std::pair<int, int> parse_ratio(const std::string& s) {
  std::pair<int, int> r;
  char sep = 0;
  std::istringstream is(s);
  if (!(is >> r.first >> sep >> r.second) || sep != ':')
    throw config_error("expected ratio like 3:2, got \"" + s + "\"");
  return r;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

template <class T>
T parse_num(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T v;
  if (!(is >> v)) throw config_error(key + ": cannot parse \"" + value + "\"");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw config_error(key + ": expected true/false, got \"" + value + "\"");
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  train.n_samples = 24;
  gen.dims = dims;
  gen.roi_min = 0;
  gen.roi_max = 1;
  gen.semiaxis_min = 8;
  gen.semiaxis_max = 12;
  // Accumulated-evidence termination: a confident classifier crosses any
  // single-step rho at the centre start, which collapses maps to one window.
  inference.accumulated_termination = true;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  using Setter = std::function<void(ExperimentConfig&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"seed", [](auto& c, const auto& v) { c.seed = parse_num<std::uint64_t>("seed", v); }},
      {"out", [](auto& c, const auto& v) { c.out_dir = v; }},
      {"mode", [](auto& c, const auto& v) { c.mode = v; }},
      {"data.cases", [](auto& c, const auto& v) { c.case_count = parse_num<int>("data.cases", v); }},
      {"data.dims",
       [](auto& c, const auto& v) {
         c.dims = parse_dims(v);
         c.gen.dims = c.dims;
       }},
      {"data.roi_min", [](auto& c, const auto& v) { c.gen.roi_min = parse_num<int>("data.roi_min", v); }},
      {"data.roi_max", [](auto& c, const auto& v) { c.gen.roi_max = parse_num<int>("data.roi_max", v); }},
      {"data.semiaxis_min",
       [](auto& c, const auto& v) { c.gen.semiaxis_min = parse_num<int>("data.semiaxis_min", v); }},
      {"data.semiaxis_max",
       [](auto& c, const auto& v) { c.gen.semiaxis_max = parse_num<int>("data.semiaxis_max", v); }},
      {"data.noise_sigma",
       [](auto& c, const auto& v) { c.gen.noise_sigma = parse_num<float>("data.noise_sigma", v); }},
      {"data.split_ratio", [](auto& c, const auto& v) { c.split_ratio = parse_ratio(v); }},
      {"classifier.epochs",
       [](auto& c, const auto& v) { c.train.epochs = parse_num<int>("classifier.epochs", v); }},
      {"classifier.batch_size",
       [](auto& c, const auto& v) { c.train.batch_size = parse_num<int>("classifier.batch_size", v); }},
      {"classifier.learning_rate",
       [](auto& c, const auto& v) { c.train.learning_rate = parse_num<float>("classifier.learning_rate", v); }},
      {"classifier.weight_decay",
       [](auto& c, const auto& v) { c.train.weight_decay = parse_num<float>("classifier.weight_decay", v); }},
      {"classifier.label_smoothing",
       [](auto& c, const auto& v) { c.train.label_smoothing = parse_num<float>("classifier.label_smoothing", v); }},
      {"classifier.n_samples",
       [](auto& c, const auto& v) { c.train.n_samples = parse_num<int>("classifier.n_samples", v); }},
      {"classifier.input_dims",
       [](auto& c, const auto& v) { c.train.input_dims = parse_dims(v); }},
      {"rl.T", [](auto& c, const auto& v) { c.rl.T = parse_num<int>("rl.T", v); }},
      {"rl.episodes_per_update",
       [](auto& c, const auto& v) { c.rl.episodes_per_update = parse_num<int>("rl.episodes_per_update", v); }},
      {"rl.updates", [](auto& c, const auto& v) { c.rl.updates = parse_num<int>("rl.updates", v); }},
      {"rl.gamma", [](auto& c, const auto& v) { c.rl.gamma = parse_num<double>("rl.gamma", v); }},
      {"rl.clip_eps", [](auto& c, const auto& v) { c.rl.clip_eps = parse_num<float>("rl.clip_eps", v); }},
      {"rl.entropy_weight",
       [](auto& c, const auto& v) { c.rl.entropy_weight = parse_num<float>("rl.entropy_weight", v); }},
      {"rl.learning_rate",
       [](auto& c, const auto& v) { c.rl.learning_rate = parse_num<float>("rl.learning_rate", v); }},
      {"rl.window", [](auto& c, const auto& v) { c.rl.window_extents = parse_dims(v); }},
      {"rl.input_dims", [](auto& c, const auto& v) { c.rl.input_dims = parse_dims(v); }},
      {"rl.step_distance",
       [](auto& c, const auto& v) {
         c.rl.step_distance = parse_num<int>("rl.step_distance", v);
         c.inference.step_distance = c.rl.step_distance;
       }},
      {"rl.positive_only",
       [](auto& c, const auto& v) { c.rl_positive_only = parse_bool("rl.positive_only", v); }},
      {"inference.rho", [](auto& c, const auto& v) { c.inference.rho = parse_num<double>("inference.rho", v); }},
      {"inference.e_max",
       [](auto& c, const auto& v) { c.inference.e_max = parse_num<int>("inference.e_max", v); }},
      {"inference.map_threshold",
       [](auto& c, const auto& v) { c.inference.map_threshold = parse_num<double>("inference.map_threshold", v); }},
      {"inference.normalization",
       [](auto& c, const auto& v) {
         if (v == "none")
           c.inference.normalization = seg::Normalization::none;
         else if (v == "max")
           c.inference.normalization = seg::Normalization::max;
         else if (v == "visit_count")
           c.inference.normalization = seg::Normalization::visit_count;
         else
           throw config_error("inference.normalization: unknown mode \"" + v + "\"");
       }},
      {"inference.accumulated_termination",
       [](auto& c, const auto& v) {
         c.inference.accumulated_termination = parse_bool("inference.accumulated_termination", v);
       }},
      {"inference.classifier_gate",
       [](auto& c, const auto& v) {
         c.classifier_gate = parse_bool("inference.classifier_gate", v);
       }},
      {"inference.threshold_search",
       [](auto& c, const auto& v) { c.threshold_search = parse_bool("inference.threshold_search", v); }},
      {"inference.threshold_search_cases",
       [](auto& c, const auto& v) { c.threshold_search_cases = parse_num<int>("inference.threshold_search_cases", v); }},
      {"ablation.axis", [](auto& c, const auto& v) { c.axis = v; }},
      {"ablation.values", [](auto& c, const auto& v) { c.axis_values = split_list(v); }},
      {"ablation.seeds_per_point",
       [](auto& c, const auto& v) { c.seeds_per_point = parse_num<int>("ablation.seeds_per_point", v); }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw config_error("unknown config key \"" + key + "\"");
  it->second(*this, value);
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("config file not found: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path + ": invalid JSON: " + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (value.is_string())
      cfg.set(key, value.get<std::string>());
    else
      cfg.set(key, value.dump());
  }
  return cfg;
}

void ExperimentConfig::validate() const {
  if (case_count < 2) throw config_error("data.cases must be >= 2");
  if (mode != "full" && mode != "inference")
    throw config_error("mode must be full or inference, got \"" + mode + "\"");
  if (axis != "none" && axis != "train_size" && axis != "window_size" && axis != "rho")
    throw config_error("ablation.axis must be none|train_size|window_size|rho");
  if (axis != "none" && axis_values.empty())
    throw config_error("ablation.values must be non-empty when an axis is set");
  rl.validate();
  inference.validate();
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

namespace {

struct Workspace {
  std::vector<data::Case> cases;
  std::vector<data::CaseRecord> records;
  data::DatasetSplit split;

  const data::Case& by_id(const std::string& id) const {
    for (const auto& c : cases)
      if (c.id == id) return c;
    throw StageError("lookup", "unknown case id " + id);
  }
};

Workspace stage_generate(const ExperimentConfig& cfg, const std::string& out_dir) {
  Workspace ws;
  const fs::path case_dir = fs::path(out_dir) / "cases";
  fs::create_directories(case_dir);
  for (int i = 0; i < cfg.case_count; ++i) {
    const std::uint64_t case_seed = mix64(mix64(cfg.seed ^ fnv1a("data")) + i);
    auto c = data::generate_synthetic_case(case_seed, cfg.gen);
    c.id = "case" + std::to_string(i);
    data::CaseRecord rec;
    rec.id = c.id;
    rec.volume_path = (case_dir / (c.id + ".spv")).string();
    rec.mask_path = (case_dir / (c.id + ".spm")).string();
    rec.label = c.label;
    data::write_volume(rec.volume_path, c.volume);
    data::write_mask(rec.mask_path, c.mask);
    ws.records.push_back(std::move(rec));
    ws.cases.push_back(std::move(c));
  }
  data::write_manifest((fs::path(out_dir) / "manifest.json").string(), ws.records);
  return ws;
}

void stage_split(const ExperimentConfig& cfg, Workspace& ws, const std::string& out_dir) {
  std::vector<std::string> ids;
  for (const auto& r : ws.records) ids.push_back(r.id);
  ws.split = data::split_dataset(ids, cfg.split_ratio, cfg.seed);
  nlohmann::json j = {{"development", ws.split.development}, {"test", ws.split.test}};
  std::ofstream os(fs::path(out_dir) / "split.json");
  os << j.dump(2) << "\n";
}

std::vector<data::Case> select_cases(const Workspace& ws,
                                     const std::vector<std::string>& ids) {
  std::vector<data::Case> out;
  for (const auto& id : ids) out.push_back(ws.by_id(id));
  return out;
}

clf::TrainResult stage_train_classifier(const ExperimentConfig& cfg, const Workspace& ws,
                                        const std::string& out_dir) {
  auto dev = select_cases(ws, ws.split.development);
  clf::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  auto result = clf::train_classifier(dev, tc);
  result.net.save((fs::path(out_dir) / "classifier.spw").string());
  std::ofstream os(fs::path(out_dir) / "classifier_loss.csv");
  os << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < result.loss_curve.size(); ++e)
    os << e << "," << result.loss_curve[e] << "\n";
  return result;
}

void write_classifier_metrics(const clf::ClassifierMetrics& m, const std::string& out_dir) {
  nlohmann::json j;
  j["accuracy"] = m.accuracy;
  j["sensitivity"] = m.sensitivity ? nlohmann::json(*m.sensitivity) : nlohmann::json("undefined");
  j["specificity"] = m.specificity ? nlohmann::json(*m.specificity) : nlohmann::json("undefined");
  j["auc"] = m.auc ? nlohmann::json(*m.auc) : nlohmann::json("undefined");
  std::ofstream os(fs::path(out_dir) / "classifier_metrics.json");
  os << j.dump(2) << "\n";
}

rl::PolicyNet stage_train_policy(const ExperimentConfig& cfg, const Workspace& ws,
                                 env::ScoreCache& scorer, const std::string& out_dir) {
  std::vector<data::Case> pool;
  for (const auto& id : ws.split.development) {
    const auto& c = ws.by_id(id);
    if (!cfg.rl_positive_only || c.label == 1) pool.push_back(c);
  }
  if (pool.empty()) throw StageError("train-policy", "no development cases to train on");
  auto policy = rl::make_policy(cfg.rl.input_dims, cfg.seed);
  rl::RLConfig rc = cfg.rl;
  rc.seed = cfg.seed;
  auto scorer_fn = [&scorer](const data::Case& c, const env::WindowSpec& w) {
    return scorer(c, w);
  };
  const auto log = rl::train_policy(policy, pool, scorer_fn, rc);
  policy.save((fs::path(out_dir) / "policy.spw").string());
  rl::write_train_log((fs::path(out_dir) / "policy_log.csv").string(), log);
  return policy;
}

double search_threshold(const ExperimentConfig& cfg, const Workspace& ws,
                        rl::PolicyNet& policy, env::ScoreCache& scorer,
                        clf::ClassifierNet* gate) {
  auto scorer_fn = [&scorer](const data::Case& c, const env::WindowSpec& w) {
    return scorer(c, w);
  };
  const int n = std::min<int>(cfg.threshold_search_cases,
                              static_cast<int>(ws.split.development.size()));
  std::vector<seg::SegResult> rollouts;
  std::vector<const data::Case*> picked;
  for (int i = 0; i < n; ++i) {
    const auto& c = ws.by_id(ws.split.development[i]);
    if (gate && clf::predict_presence(*gate, c.volume) < 0.5f) continue;
    auto rng = substream(cfg.seed, "threshold-search", i);
    rollouts.push_back(seg::run_segmentation(policy, scorer_fn, c, cfg.rl.window_extents,
                                             cfg.inference, rng));
    picked.push_back(&c);
  }
  if (rollouts.empty()) return cfg.inference.map_threshold;
  double best_threshold = cfg.inference.map_threshold;
  double best_dice = -1.0;
  for (int step = 1; step <= 19; ++step) {
    const double threshold = 0.05 * step;
    seg::InferenceConfig ic = cfg.inference;
    ic.map_threshold = threshold;
    std::vector<double> dices;
    for (std::size_t i = 0; i < rollouts.size(); ++i) {
      const auto tr = seg::threshold_map(rollouts[i].map, ic, &rollouts[i].visits);
      dices.push_back(seg::dice(tr.mask, picked[i]->mask));
    }
    const double mean_dice = mean_of(dices);
    if (mean_dice > best_dice) {
      best_dice = mean_dice;
      best_threshold = threshold;
    }
  }
  return best_threshold;
}

MetricsRecord stage_segment_test(const ExperimentConfig& cfg, const Workspace& ws,
                                 rl::PolicyNet& policy, env::ScoreCache& scorer,
                                 double map_threshold, clf::ClassifierNet* gate,
                                 const std::string& out_dir) {
  auto scorer_fn = [&scorer](const data::Case& c, const env::WindowSpec& w) {
    return scorer(c, w);
  };
  const fs::path seg_dir = fs::path(out_dir) / "segmentation";
  fs::create_directories(seg_dir);
  seg::InferenceConfig ic = cfg.inference;
  ic.map_threshold = map_threshold;

  MetricsRecord record;
  record.selected_threshold = map_threshold;
  std::vector<double> dices, mious;
  for (std::size_t i = 0; i < ws.split.test.size(); ++i) {
    const auto& c = ws.by_id(ws.split.test[i]);
    seg::SegResult result;
    if (gate && clf::predict_presence(*gate, c.volume) < 0.5f) {
      // image-level gate: no object detected, leave the map all-zero
      result.map = data::ProbabilityMap(c.volume.dims);
      result.visits.assign(c.volume.dims.count(), 0);
    } else {
      auto rng = substream(cfg.seed, "inference", i);
      result = seg::run_segmentation(policy, scorer_fn, c, cfg.rl.window_extents, ic, rng);
    }
    auto tr = seg::threshold_map(result.map, ic, &result.visits);
    data::write_prob_map((seg_dir / (c.id + ".spp")).string(), result.map);
    data::write_mask((seg_dir / (c.id + ".spm")).string(), tr.mask);
    seg::write_trajectory_log((seg_dir / (c.id + ".jsonl")).string(), result.log);
    CaseMetrics cm;
    cm.seed = cfg.seed;
    cm.id = c.id;
    cm.dice = seg::dice(tr.mask, c.mask);
    cm.miou = seg::miou(tr.mask, c.mask);
    record.per_case.push_back(cm);
    dices.push_back(cm.dice);
    mious.push_back(cm.miou);
  }
  record.mean_dice = mean_of(dices);
  record.std_dice = population_std(dices);
  record.mean_miou = mean_of(mious);
  record.std_miou = population_std(mious);
  return record;
}

template <class F>
auto run_stage(const std::string& name, F&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const config_error&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

MetricsRecord run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  const auto t_start = Clock::now();
  MetricsRecord record;

  auto t0 = Clock::now();
  Workspace ws = run_stage("generate", [&] { return stage_generate(cfg, cfg.out_dir); });
  record.timings_sec["generate"] = seconds_since(t0);

  t0 = Clock::now();
  run_stage("split", [&] {
    stage_split(cfg, ws, cfg.out_dir);
    return 0;
  });
  record.timings_sec["split"] = seconds_since(t0);

  clf::ClassifierNet classifier;
  rl::PolicyNet policy;
  double threshold = cfg.inference.map_threshold;

  if (cfg.mode == "inference") {
    const std::string clf_path = (fs::path(cfg.out_dir) / "classifier.spw").string();
    const std::string pol_path = (fs::path(cfg.out_dir) / "policy.spw").string();
    if (!fs::exists(clf_path))
      throw StageError("load-checkpoints", "classifier checkpoint not found: " + clf_path);
    if (!fs::exists(pol_path))
      throw StageError("load-checkpoints", "policy checkpoint not found: " + pol_path);
    classifier = clf::ClassifierNet::load(clf_path);
    policy = rl::PolicyNet::load(pol_path);
  } else {
    t0 = Clock::now();
    auto trained =
        run_stage("train-classifier", [&] { return stage_train_classifier(cfg, ws, cfg.out_dir); });
    classifier = std::move(trained.net);
    record.timings_sec["train_classifier"] = seconds_since(t0);

    t0 = Clock::now();
    record.classifier = run_stage("evaluate-classifier", [&] {
      auto test = select_cases(ws, ws.split.test);
      auto m = clf::evaluate_classifier(classifier, test);
      write_classifier_metrics(m, cfg.out_dir);
      return m;
    });
    record.timings_sec["evaluate_classifier"] = seconds_since(t0);
  }

  env::ScoreCache scorer(clf::make_presence_scorer(classifier));
  clf::ClassifierNet* gate = cfg.classifier_gate ? &classifier : nullptr;

  if (cfg.mode != "inference") {
    t0 = Clock::now();
    policy = run_stage("train-policy",
                       [&] { return stage_train_policy(cfg, ws, scorer, cfg.out_dir); });
    record.timings_sec["train_policy"] = seconds_since(t0);

    if (cfg.threshold_search) {
      t0 = Clock::now();
      threshold = run_stage("threshold-search",
                            [&] { return search_threshold(cfg, ws, policy, scorer, gate); });
      record.timings_sec["threshold_search"] = seconds_since(t0);
    }
  }

  t0 = Clock::now();
  auto seg_record = run_stage("segment", [&] {
    return stage_segment_test(cfg, ws, policy, scorer, threshold, gate, cfg.out_dir);
  });
  record.timings_sec["segment"] = seconds_since(t0);

  record.per_case = std::move(seg_record.per_case);
  record.mean_dice = seg_record.mean_dice;
  record.std_dice = seg_record.std_dice;
  record.mean_miou = seg_record.mean_miou;
  record.std_miou = seg_record.std_miou;
  record.selected_threshold = threshold;
  record.timings_sec["total"] = seconds_since(t_start);

  write_metrics_record(record, cfg.out_dir);
  return record;
}

namespace {

Workspace load_workspace(const std::string& out_dir, bool need_split) {
  Workspace ws;
  const std::string manifest = (fs::path(out_dir) / "manifest.json").string();
  if (!fs::exists(manifest))
    throw StageError("load-workspace", "manifest not found: " + manifest);
  ws.records = data::read_manifest(manifest);
  for (const auto& rec : ws.records) ws.cases.push_back(data::load_case(rec));
  if (need_split) {
    const std::string split_path = (fs::path(out_dir) / "split.json").string();
    if (!fs::exists(split_path))
      throw StageError("load-workspace", "split not found: " + split_path + "; run split first");
    std::ifstream is(split_path);
    nlohmann::json j;
    is >> j;
    ws.split.development = j.at("development").get<std::vector<std::string>>();
    ws.split.test = j.at("test").get<std::vector<std::string>>();
  }
  return ws;
}

clf::ClassifierNet load_classifier_checkpoint(const std::string& out_dir) {
  const std::string path = (fs::path(out_dir) / "classifier.spw").string();
  if (!fs::exists(path))
    throw StageError("load-checkpoints", "classifier checkpoint not found: " + path);
  return clf::ClassifierNet::load(path);
}

rl::PolicyNet load_policy_checkpoint(const std::string& out_dir) {
  const std::string path = (fs::path(out_dir) / "policy.spw").string();
  if (!fs::exists(path))
    throw StageError("load-checkpoints", "policy checkpoint not found: " + path);
  return rl::PolicyNet::load(path);
}

}  // namespace

void run_generate(const ExperimentConfig& cfg) {
  cfg.validate();
  run_stage("generate", [&] { return stage_generate(cfg, cfg.out_dir); });
}

void run_split(const ExperimentConfig& cfg) {
  cfg.validate();
  Workspace ws = run_stage("load-workspace", [&] { return load_workspace(cfg.out_dir, false); });
  run_stage("split", [&] {
    stage_split(cfg, ws, cfg.out_dir);
    return 0;
  });
}

void run_train_classifier(const ExperimentConfig& cfg) {
  cfg.validate();
  Workspace ws = run_stage("load-workspace", [&] { return load_workspace(cfg.out_dir, true); });
  auto trained =
      run_stage("train-classifier", [&] { return stage_train_classifier(cfg, ws, cfg.out_dir); });
  run_stage("evaluate-classifier", [&] {
    auto m = clf::evaluate_classifier(trained.net, select_cases(ws, ws.split.test));
    write_classifier_metrics(m, cfg.out_dir);
    return 0;
  });
}

void run_train_policy(const ExperimentConfig& cfg) {
  cfg.validate();
  Workspace ws = run_stage("load-workspace", [&] { return load_workspace(cfg.out_dir, true); });
  auto classifier = load_classifier_checkpoint(cfg.out_dir);
  env::ScoreCache scorer(clf::make_presence_scorer(classifier));
  run_stage("train-policy", [&] { return stage_train_policy(cfg, ws, scorer, cfg.out_dir); });
}

MetricsRecord run_segment(const ExperimentConfig& cfg) {
  cfg.validate();
  Workspace ws = run_stage("load-workspace", [&] { return load_workspace(cfg.out_dir, true); });
  auto classifier = load_classifier_checkpoint(cfg.out_dir);
  auto policy = load_policy_checkpoint(cfg.out_dir);
  env::ScoreCache scorer(clf::make_presence_scorer(classifier));
  double threshold = cfg.inference.map_threshold;
  clf::ClassifierNet* gate = cfg.classifier_gate ? &classifier : nullptr;
  if (cfg.threshold_search)
    threshold = run_stage("threshold-search",
                          [&] { return search_threshold(cfg, ws, policy, scorer, gate); });
  auto record = run_stage("segment", [&] {
    return stage_segment_test(cfg, ws, policy, scorer, threshold, gate, cfg.out_dir);
  });
  write_metrics_record(record, cfg.out_dir);
  return record;
}

MetricsRecord run_evaluate(const ExperimentConfig& cfg) {
  cfg.validate();
  Workspace ws = run_stage("load-workspace", [&] { return load_workspace(cfg.out_dir, true); });
  return run_stage("evaluate", [&] {
    MetricsRecord record;
    std::vector<double> dices, mious;
    for (const auto& id : ws.split.test) {
      const fs::path mask_path = fs::path(cfg.out_dir) / "segmentation" / (id + ".spm");
      if (!fs::exists(mask_path))
        throw std::runtime_error("predicted mask not found: " + mask_path.string() +
                                 "; run segment first");
      const auto pred = data::read_mask(mask_path.string());
      const auto& c = ws.by_id(id);
      CaseMetrics cm;
      cm.seed = cfg.seed;
      cm.id = id;
      cm.dice = seg::dice(pred, c.mask);
      cm.miou = seg::miou(pred, c.mask);
      record.per_case.push_back(cm);
      dices.push_back(cm.dice);
      mious.push_back(cm.miou);
    }
    record.mean_dice = mean_of(dices);
    record.std_dice = population_std(dices);
    record.mean_miou = mean_of(mious);
    record.std_miou = population_std(mious);
    write_metrics_record(record, cfg.out_dir);
    return record;
  });
}

void run_report(const ExperimentConfig& cfg) {
  run_stage("report", [&] {
    const fs::path csv = fs::path(cfg.out_dir) / "metrics.csv";
    if (!fs::exists(csv)) throw std::runtime_error("metrics.csv not found under " + cfg.out_dir);
    std::ifstream is(csv);
    std::string line;
    std::getline(is, line);  // header
    std::vector<CaseMetrics> rows;
    while (std::getline(is, line)) {
      std::istringstream ls(line);
      CaseMetrics cm;
      std::string field;
      std::getline(ls, cm.axis_value, ',');
      std::getline(ls, field, ',');
      cm.seed = field.empty() ? 0 : std::stoull(field);
      std::getline(ls, cm.id, ',');
      std::getline(ls, field, ',');
      cm.dice = std::stod(field);
      std::getline(ls, field, ',');
      cm.miou = std::stod(field);
      rows.push_back(cm);
    }
    if (rows.empty()) throw std::runtime_error("metrics.csv has no rows");
    export_metrics(rows, (fs::path(cfg.out_dir) / "report.csv").string(),
                   (fs::path(cfg.out_dir) / "report.json").string());
    return 0;
  });
}

namespace {

std::uint64_t point_seed(const ExperimentConfig& cfg, int seed_index) {
  return mix64(mix64(cfg.seed ^ fnv1a("ablation")) + seed_index);
}

}  // namespace

AblationResult run_ablation(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.axis == "none") throw config_error("run_ablation: ablation.axis is none");
  fs::create_directories(cfg.out_dir);

  AblationResult result;
  std::map<std::string, std::vector<double>> metric_by_value;
  std::map<std::string, std::string> error_by_value;

  for (int s = 0; s < cfg.seeds_per_point; ++s) {
    const std::uint64_t sub_seed = point_seed(cfg, s);
    const fs::path seed_dir = fs::path(cfg.out_dir) / ("seed" + std::to_string(s));

    if (cfg.axis == "train_size") {
      ExperimentConfig base = cfg;
      base.seed = sub_seed;
      Workspace ws = stage_generate(base, (seed_dir / "data").string());
      stage_split(base, ws, (seed_dir / "data").string());
      auto test = select_cases(ws, ws.split.test);
      for (const auto& value : cfg.axis_values) {
        try {
          ExperimentConfig point = base;
          point.train.n_samples = parse_num<int>("train_size", value);
          const fs::path dir = seed_dir / ("n" + value);
          fs::create_directories(dir);
          auto trained = stage_train_classifier(point, ws, dir.string());
          auto m = clf::evaluate_classifier(trained.net, test);
          write_classifier_metrics(m, dir.string());
          metric_by_value[value].push_back(m.accuracy);
        } catch (const std::exception& e) {
          error_by_value[value] = e.what();
        }
      }
    } else if (cfg.axis == "window_size") {
      ExperimentConfig base = cfg;
      base.seed = sub_seed;
      Workspace ws = stage_generate(base, (seed_dir / "data").string());
      stage_split(base, ws, (seed_dir / "data").string());
      auto trained = stage_train_classifier(base, ws, (seed_dir / "data").string());
      env::ScoreCache scorer(clf::make_presence_scorer(trained.net));
      clf::ClassifierNet* gate = base.classifier_gate ? &trained.net : nullptr;
      for (const auto& value : cfg.axis_values) {
        try {
          ExperimentConfig point = base;
          point.rl.window_extents = parse_dims(value);
          const fs::path dir = seed_dir / ("w" + value);
          fs::create_directories(dir);
          scorer.clear();  // scores depend on window extents
          auto policy = stage_train_policy(point, ws, scorer, dir.string());
          double threshold = point.inference.map_threshold;
          if (point.threshold_search)
            threshold = search_threshold(point, ws, policy, scorer, gate);
          auto rec = stage_segment_test(point, ws, policy, scorer, threshold, gate, dir.string());
          metric_by_value[value].push_back(rec.mean_dice);
          for (auto cm : rec.per_case) {
            cm.axis_value = value;
            cm.seed = sub_seed;
            result.detail.push_back(cm);
          }
        } catch (const std::exception& e) {
          error_by_value[value] = e.what();
        }
      }
    } else {  // rho
      ExperimentConfig base = cfg;
      base.seed = sub_seed;
      Workspace ws = stage_generate(base, (seed_dir / "data").string());
      stage_split(base, ws, (seed_dir / "data").string());
      auto trained = stage_train_classifier(base, ws, (seed_dir / "data").string());
      env::ScoreCache scorer(clf::make_presence_scorer(trained.net));
      clf::ClassifierNet* gate = base.classifier_gate ? &trained.net : nullptr;
      auto policy = stage_train_policy(base, ws, scorer, (seed_dir / "data").string());
      for (const auto& value : cfg.axis_values) {
        try {
          ExperimentConfig point = base;
          point.inference.rho = parse_num<double>("rho", value);
          const fs::path dir = seed_dir / ("rho" + value);
          fs::create_directories(dir);
          double threshold = point.inference.map_threshold;
          if (point.threshold_search)
            threshold = search_threshold(point, ws, policy, scorer, gate);
          auto rec = stage_segment_test(point, ws, policy, scorer, threshold, gate, dir.string());
          metric_by_value[value].push_back(rec.mean_dice);
          for (auto cm : rec.per_case) {
            cm.axis_value = value;
            cm.seed = sub_seed;
            result.detail.push_back(cm);
          }
        } catch (const std::exception& e) {
          error_by_value[value] = e.what();
        }
      }
    }
  }

  for (const auto& value : cfg.axis_values) {
    AblationRow row;
    row.axis_value = value;
    row.metric = cfg.axis == "train_size" ? "accuracy" : "dice";
    const auto it = metric_by_value.find(value);
    if (it != metric_by_value.end()) {
      row.mean = mean_of(it->second);
      row.stddev = population_std(it->second);
      row.n = static_cast<int>(it->second.size());
    }
    if (error_by_value.count(value)) row.error = error_by_value[value];
    result.rows.push_back(row);
  }
  write_ablation_table(result, cfg.out_dir);
  return result;
}

void export_metrics(const std::vector<CaseMetrics>& records, const std::string& csv_path,
                    const std::string& json_path) {
  if (records.empty()) throw config_error("export_metrics: no records");
  std::ofstream csv(csv_path);
  if (!csv) throw data::format_error(csv_path + ": cannot open for writing");
  csv << "axis_value,seed,case_id,dice,miou\n";
  std::vector<double> dices, mious;
  for (const auto& r : records) {
    csv << r.axis_value << "," << r.seed << "," << r.id << "," << r.dice << ","
        << r.miou << "\n";
    dices.push_back(r.dice);
    mious.push_back(r.miou);
  }
  nlohmann::json j = {{"dice", {{"mean", mean_of(dices)}, {"std", population_std(dices)}, {"n", dices.size()}}},
                      {"miou", {{"mean", mean_of(mious)}, {"std", population_std(mious)}, {"n", mious.size()}}}};
  std::ofstream js(json_path);
  if (!js) throw data::format_error(json_path + ": cannot open for writing");
  js << j.dump(2) << "\n";
}

void write_metrics_record(const MetricsRecord& record, const std::string& dir) {
  if (!record.per_case.empty())
    export_metrics(record.per_case, (fs::path(dir) / "metrics.csv").string(),
                   (fs::path(dir) / "metrics_aggregate.json").string());
  nlohmann::json j;
  j["mean_dice"] = record.mean_dice;
  j["std_dice"] = record.std_dice;
  j["mean_miou"] = record.mean_miou;
  j["std_miou"] = record.std_miou;
  j["selected_threshold"] = record.selected_threshold;
  j["classifier"] = {
      {"accuracy", record.classifier.accuracy},
      {"sensitivity",
       record.classifier.sensitivity ? nlohmann::json(*record.classifier.sensitivity)
                                     : nlohmann::json("undefined")},
      {"specificity",
       record.classifier.specificity ? nlohmann::json(*record.classifier.specificity)
                                     : nlohmann::json("undefined")},
      {"auc", record.classifier.auc ? nlohmann::json(*record.classifier.auc)
                                    : nlohmann::json("undefined")}};
  j["timings_sec"] = record.timings_sec;
  std::ofstream os(fs::path(dir) / "metrics.json");
  os << j.dump(2) << "\n";
}

void write_ablation_table(const AblationResult& result, const std::string& dir) {
  std::ofstream os(fs::path(dir) / "ablation.csv");
  os << "axis_value,mean,std,n,metric,error\n";
  for (const auto& row : result.rows)
    os << row.axis_value << "," << row.mean << "," << row.stddev << "," << row.n << ","
       << row.metric << "," << row.error << "\n";
  if (!result.detail.empty())
    export_metrics(result.detail, (fs::path(dir) / "ablation_cases.csv").string(),
                   (fs::path(dir) / "ablation_aggregate.json").string());
}

}  // namespace spars::harness
