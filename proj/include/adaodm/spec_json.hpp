#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "adaodm/bench.hpp"

namespace adaodm {

using nlohmann::json;

// Config/spec files are JSON. Every key is optional and falls back to the
// struct default, so a minimal spec can be just {}.

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lambda = j.value("lambda", c.lambda);
  c.gamma = j.value("gamma", c.gamma);
  c.eta = j.value("eta", c.eta);
  if (j.contains("ds_metric")) c.ds_metric = ds_metric_from_string(j["ds_metric"]);
  if (j.contains("base_dg")) {
    const std::string b = j["base_dg"];
    if (b == "erm") c.base_dg = TrainConfig::BaseDG::kErm;
    else if (b == "coral") c.base_dg = TrainConfig::BaseDG::kCoral;
    else throw std::invalid_argument("base_dg must be 'erm' or 'coral', got '" + b + "'");
  }
  c.coral_weight = j.value("coral_weight", c.coral_weight);
  c.seed = j.value("seed", c.seed);
  c.val_interval = j.value("val_interval", c.val_interval);
  return c;
}

inline json to_json(const TrainConfig& c) {
  return json{{"steps", c.steps},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"lambda", c.lambda},
              {"gamma", c.gamma},
              {"eta", c.eta},
              {"ds_metric", to_string(c.ds_metric)},
              {"base_dg", c.base_dg == TrainConfig::BaseDG::kErm ? "erm" : "coral"},
              {"coral_weight", c.coral_weight},
              {"seed", c.seed},
              {"val_interval", c.val_interval}};
}

inline AdaptConfig adapt_config_from_json(const json& j) {
  AdaptConfig c;
  if (j.contains("method")) c.method = adapt_method_from_string(j["method"]);
  c.test_batch_size = j.value("test_batch_size", c.test_batch_size);
  c.steps_per_batch = j.value("steps_per_batch", c.steps_per_batch);
  c.lr_multiplier = j.value("lr_multiplier", c.lr_multiplier);
  c.reset_per_batch = j.value("reset_per_batch", c.reset_per_batch);
  if (j.contains("ds_metric")) c.ds_metric = ds_metric_from_string(j["ds_metric"]);
  c.pl_threshold = j.value("pl_threshold", c.pl_threshold);
  c.bn_batch_stats = j.value("bn_batch_stats", c.bn_batch_stats);
  return c;
}

inline json to_json(const AdaptConfig& c) {
  return json{{"method", to_string(c.method)},
              {"test_batch_size", c.test_batch_size},
              {"steps_per_batch", c.steps_per_batch},
              {"lr_multiplier", c.lr_multiplier},
              {"reset_per_batch", c.reset_per_batch},
              {"ds_metric", to_string(c.ds_metric)},
              {"pl_threshold", c.pl_threshold},
              {"bn_batch_stats", c.bn_batch_stats}};
}

inline ExperimentSpec experiment_spec_from_json(const json& j) {
  ExperimentSpec s;
  if (j.contains("family")) {
    const std::string f = j["family"];
    if (f == "rotated_moons") s.family = DomainSpec::Family::kRotatedMoons;
    else if (f == "shifted_blobs") s.family = DomainSpec::Family::kShiftedBlobs;
    else throw std::invalid_argument("family must be 'rotated_moons' or 'shifted_blobs'");
  }
  if (j.contains("domain_params"))
    s.domain_params = j["domain_params"].get<std::vector<double>>();
  s.target_domain = j.value("target_domain", s.target_domain);
  s.n_samples = j.value("n_samples", s.n_samples);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.split_fraction = j.value("split_fraction", s.split_fraction);
  s.subsample_fraction = j.value("subsample_fraction", s.subsample_fraction);
  s.single_source_heads = j.value("single_source_heads", s.single_source_heads);
  if (j.contains("hidden_dims"))
    s.hidden_dims = j["hidden_dims"].get<std::vector<std::size_t>>();
  s.feature_dim = j.value("feature_dim", s.feature_dim);
  s.data_csv = j.value("data_csv", s.data_csv);
  if (j.contains("train")) s.train = train_config_from_json(j["train"]);
  if (j.contains("methods")) {
    s.methods.clear();
    for (const auto& m : j["methods"]) s.methods.push_back(adapt_config_from_json(m));
  }
  if (j.contains("seeds")) s.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  return s;
}

inline json to_json(const ExperimentSpec& s) {
  json j;
  j["family"] =
      s.family == DomainSpec::Family::kRotatedMoons ? "rotated_moons" : "shifted_blobs";
  j["domain_params"] = s.domain_params;
  j["target_domain"] = s.target_domain;
  j["n_samples"] = s.n_samples;
  j["noise_sigma"] = s.noise_sigma;
  j["split_fraction"] = s.split_fraction;
  j["subsample_fraction"] = s.subsample_fraction;
  j["single_source_heads"] = s.single_source_heads;
  j["hidden_dims"] = s.hidden_dims;
  j["feature_dim"] = s.feature_dim;
  if (!s.data_csv.empty()) j["data_csv"] = s.data_csv;
  j["train"] = to_json(s.train);
  json methods = json::array();
  for (const auto& m : s.method_list()) methods.push_back(to_json(m));
  j["methods"] = methods;
  j["seeds"] = s.seeds;
  return j;
}

inline ExperimentSpec load_experiment_spec(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open spec file " + path);
  json j;
  is >> j;
  return experiment_spec_from_json(j);
}

inline void write_summary_json(const std::string& path, const std::vector<ResultRow>& rows) {
  json j;
  j["methods"] = json::array();
  for (const auto& s : summarize(rows)) {
    j["methods"].push_back(json{{"method", s.method},
                                {"runs", s.n},
                                {"mean_frozen_accuracy", s.mean_frozen},
                                {"mean_adapted_accuracy", s.mean_adapted},
                                {"mean_gain", s.mean_gain},
                                {"stderr_gain", s.stderr_gain}});
  }
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.failed ? 1 : 0;
  j["failed_rows"] = failed;
  j["total_rows"] = rows.size();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << j.dump(2) << '\n';
}

}  // namespace adaodm
