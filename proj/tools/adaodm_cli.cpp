// Command-line front end: train / adapt / experiment / ablate /
// export-features / gen-data over JSON spec files.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "adaodm/adapt.hpp"
#include "adaodm/bench.hpp"
#include "adaodm/spec_json.hpp"
#include "adaodm/train.hpp"

namespace fs = std::filesystem;
using namespace adaodm;

namespace {

std::string default_out_dir() {
  const char* env = std::getenv("ADAODM_OUT_DIR");
  return env && *env ? env : "out";
}

fs::path ensure_dir(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

int cmd_train(const std::string& config, const std::string& out) {
  ExperimentSpec spec = load_experiment_spec(config);
  spec.validate();
  const fs::path dir = ensure_dir(out);

  PreparedRun run = prepare_run(spec, spec.train.seed);
  TrainResult result = train_source_model(run.sources, run.model, spec.train);
  save_model(run.model, (dir / "model.ckpt").string());
  write_train_records_csv((dir / "train_records.csv").string(), result.records);

  json summary;
  summary["best_val_acc"] = result.best_val_acc;
  summary["best_step"] = result.best_step;
  summary["checkpoint"] = (dir / "model.ckpt").string();
  std::ofstream((dir / "train_summary.json").string()) << summary.dump(2) << '\n';
  std::cout << "trained " << spec.train.steps << " steps, best val acc "
            << result.best_val_acc << ", checkpoint " << (dir / "model.ckpt").string()
            << '\n';
  return 0;
}

int cmd_adapt(const std::string& checkpoint, const std::string& config,
              const std::string& method, std::size_t steps, double lr_mult,
              std::size_t batch_size, const std::string& out) {
  ExperimentSpec spec = load_experiment_spec(config);
  spec.validate();
  Model model = load_model(checkpoint);
  const fs::path dir = ensure_dir(out);

  AdaptConfig cfg;
  cfg.method = adapt_method_from_string(method);
  cfg.steps_per_batch = steps;
  cfg.lr_multiplier = lr_mult;
  cfg.test_batch_size = batch_size;
  cfg.ds_metric = spec.train.ds_metric;

  PreparedRun run = prepare_run(spec, spec.train.seed);
  const double frozen = evaluate(model, run.target_eval, true, BnMode::kEval);
  BatchStream stream(make_batches(run.target_eval, cfg.test_batch_size,
                                  mix_seed(spec.train.seed, 777), false));
  StreamStats stats = adapt_stream(model, stream, cfg, spec.train.lr);
  write_adapt_records_csv((dir / "adapt_records.csv").string(), stats);
  save_model(model, (dir / "adapted_model.ckpt").string());

  json summary;
  summary["method"] = method;
  summary["config"] = to_json(cfg);
  summary["frozen_accuracy"] = frozen;
  summary["final_accuracy"] = stats.running_accuracy;
  summary["batches_seen"] = stats.batches_seen;
  summary["samples_seen"] = stats.samples_seen;
  std::ofstream((dir / "adapt_summary.json").string()) << summary.dump(2) << '\n';
  std::cout << "adapted " << stats.samples_seen << " samples with " << method
            << ": accuracy " << frozen << " -> " << stats.running_accuracy << '\n';
  return 0;
}

int cmd_experiment(const std::string& spec_path, std::size_t workers,
                   const std::string& out) {
  ExperimentSpec spec = load_experiment_spec(spec_path);
  spec.validate();
  const fs::path dir = ensure_dir(out);
  const auto rows = run_experiment(spec, workers);
  write_results_csv((dir / "results.csv").string(), rows);
  write_timings_csv((dir / "timings.csv").string(), rows);
  write_gains_csv((dir / "gains.csv").string(), rows);
  write_summary_json((dir / "summary.json").string(), rows);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.failed ? 1 : 0;
  std::cout << rows.size() << " result rows (" << failed << " failed) -> "
            << dir.string() << '\n';
  return failed == 0 ? 0 : 2;
}

int cmd_ablate(const std::string& spec_path, const std::string& axis,
               std::size_t workers, const std::string& out) {
  ExperimentSpec spec = load_experiment_spec(spec_path);
  spec.validate();
  const fs::path dir = ensure_dir(out);
  const auto rows = run_ablation_grid(spec, axis, workers);
  write_ablation_csv((dir / ("ablation_" + axis + ".csv")).string(), rows);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.row.failed ? 1 : 0;
  std::cout << rows.size() << " ablation rows for axis " << axis << " (" << failed
            << " failed) -> " << dir.string() << '\n';
  return failed == 0 ? 0 : 2;
}

int cmd_export_features(const std::string& checkpoint, const std::string& config,
                        const std::string& out_file) {
  ExperimentSpec spec = load_experiment_spec(config);
  spec.validate();
  Model model = load_model(checkpoint);
  PreparedRun run = prepare_run(spec, spec.train.seed);
  std::vector<Dataset> domains;
  for (const auto& sd : run.sources) domains.push_back(sd.train);
  domains.push_back(run.target_eval);
  export_features(model, domains, out_file);
  std::cout << "features written to " << out_file << '\n';
  return 0;
}

int cmd_gen_data(const std::string& config, const std::string& out_file) {
  ExperimentSpec spec = load_experiment_spec(config);
  spec.validate();
  std::vector<Dataset> domains;
  for (std::size_t i = 0; i < spec.domain_params.size(); ++i) {
    DomainSpec d;
    d.family = spec.family;
    d.domain_param = spec.domain_params[i];
    d.n_samples = spec.n_samples;
    d.noise_sigma = spec.noise_sigma;
    d.seed = mix_seed(spec.train.seed, i);
    domains.push_back(make_domain(d));
  }
  save_domains_csv(out_file, domains);
  std::cout << domains.size() << " domains written to " << out_file << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AdaODM: adversarially trained domain-specific classifiers with "
               "test-time adaptation by online disagreement minimization"};
  app.require_subcommand(1);

  std::string config, spec_path, checkpoint, method = "adaodm", axis = "lambda";
  std::string out = default_out_dir(), out_file;
  std::size_t steps = 1, batch_size = 64, workers = 1;
  double lr_mult = 1.0;

  auto* train = app.add_subcommand("train", "Train a source model");
  train->add_option("--config", config, "experiment spec JSON")->required();
  train->add_option("--out", out, "output directory");

  auto* adapt = app.add_subcommand("adapt", "Stream test-time adaptation from a checkpoint");
  adapt->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  adapt->add_option("--config", config, "experiment spec JSON")->required();
  adapt->add_option("--method", method, "none|adaodm|tent|pl");
  adapt->add_option("--steps", steps, "optimization steps per test batch");
  adapt->add_option("--lr-mult", lr_mult, "learning-rate multiplier");
  adapt->add_option("--batch-size", batch_size, "test batch size");
  adapt->add_option("--out", out, "output directory");

  auto* experiment = app.add_subcommand("experiment", "Train + compare adaptation methods");
  experiment->add_option("--spec", spec_path, "experiment spec JSON")->required();
  experiment->add_option("--workers", workers, "parallel seed workers");
  experiment->add_option("--out", out, "output directory");

  auto* ablate = app.add_subcommand("ablate", "Sweep one ablation axis");
  ablate->add_option("--spec", spec_path, "experiment spec JSON")->required();
  ablate->add_option("--axis", axis,
                     "lambda|ds_metric|batch_size|steps|lr_mult|heads_single_source|"
                     "num_source_domains");
  ablate->add_option("--workers", workers, "parallel seed workers");
  ablate->add_option("--out", out, "output directory");

  auto* expfeat = app.add_subcommand("export-features", "Dump eval-mode features as CSV");
  expfeat->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  expfeat->add_option("--config", config, "experiment spec JSON")->required();
  expfeat->add_option("--out", out_file, "output CSV file")->required();

  auto* gendata = app.add_subcommand("gen-data", "Dump generated domains as CSV");
  gendata->add_option("--config", config, "experiment spec JSON")->required();
  gendata->add_option("--out", out_file, "output CSV file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train)) return cmd_train(config, out);
    if (app.got_subcommand(adapt))
      return cmd_adapt(checkpoint, config, method, steps, lr_mult, batch_size, out);
    if (app.got_subcommand(experiment)) return cmd_experiment(spec_path, workers, out);
    if (app.got_subcommand(ablate)) return cmd_ablate(spec_path, axis, workers, out);
    if (app.got_subcommand(expfeat)) return cmd_export_features(checkpoint, config, out_file);
    if (app.got_subcommand(gendata)) return cmd_gen_data(config, out_file);
  } catch (const std::exception& e) {
    json err;
    err["error"] = e.what();
    err["command"] = argc > 1 ? argv[1] : "";
    std::cerr << err.dump() << '\n';
    return 1;
  }
  return 0;
}
