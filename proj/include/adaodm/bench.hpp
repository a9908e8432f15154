#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "adaodm/adapt.hpp"
#include "adaodm/data.hpp"
#include "adaodm/model.hpp"
#include "adaodm/train.hpp"

namespace adaodm {

struct ExperimentSpec {
  DomainSpec::Family family = DomainSpec::Family::kRotatedMoons;
  std::vector<double> domain_params = {0.0, 30.0, 60.0, 90.0};
  std::size_t target_domain = 3;
  std::size_t n_samples = 1000;
  double noise_sigma = 0.15;
  double split_fraction = 0.8;
  double subsample_fraction = 1.0;     // applied to each source train split
  std::size_t single_source_heads = 3; // head count when only one source remains
  std::vector<std::size_t> hidden_dims = {64, 64};
  std::size_t feature_dim = 32;
  std::string data_csv;  // inject external domains instead of generating
  TrainConfig train;
  std::vector<AdaptConfig> methods;  // empty -> {none, adaodm, tent, pl}
  std::vector<std::uint64_t> seeds = {0, 1, 2};

  void validate() const {
    if (domain_params.size() < 2 && data_csv.empty()) {
      throw std::invalid_argument("ExperimentSpec: need at least 2 domains");
    }
    // With injected data the domain count comes from the file; prepare_run
    // re-checks the target index against it.
    if (data_csv.empty() && target_domain >= domain_params.size()) {
      throw std::invalid_argument("ExperimentSpec: target_domain out of range");
    }
    if (seeds.empty()) throw std::invalid_argument("ExperimentSpec: no seeds");
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
      throw std::invalid_argument("ExperimentSpec: subsample_fraction must be in (0,1]");
    }
  }

  std::vector<AdaptConfig> method_list() const {
    if (!methods.empty()) return methods;
    std::vector<AdaptConfig> out(4);
    out[0].method = AdaptConfig::Method::kNone;
    out[1].method = AdaptConfig::Method::kAdaODM;
    out[2].method = AdaptConfig::Method::kTent;
    out[3].method = AdaptConfig::Method::kPL;
    for (auto& m : out) m.ds_metric = train.ds_metric;
    return out;
  }
};

struct ResultRow {
  std::size_t target_domain = 0;
  std::string method;
  std::uint64_t seed = 0;
  double frozen_accuracy = 0.0;
  double adapted_accuracy = 0.0;
  double gain = 0.0;
  double mean_ds_target = 0.0;
  double coral_indicator_before = 0.0;
  double coral_indicator_after = 0.0;
  std::string stream_checksum;
  double train_seconds = 0.0;
  double adapt_seconds = 0.0;
  double wall_time = 0.0;
  bool failed = false;
  std::string error;
};

namespace detail {

inline std::string fnv1a_hex(const std::vector<DomainBatch>& batches) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& b : batches) {
    const std::uint64_t n = b.size();
    mix(&n, sizeof(n));
    mix(b.x.data().data(), b.x.numel() * sizeof(double));
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Deterministic prefix subsample of a dataset (already shuffled by split()).
inline Dataset subsample(const Dataset& ds, double fraction) {
  if (fraction >= 1.0) return ds;
  const std::size_t n = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size()))));
  Dataset out;
  out.x = Tensor({n, ds.dim()});
  out.y.assign(ds.y.begin(), ds.y.begin() + static_cast<std::ptrdiff_t>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < ds.dim(); ++d) out.x(i, d) = ds.x(i, d);
  return out;
}

inline void run_jobs(std::size_t n_jobs, std::size_t workers,
                     const std::function<void(std::size_t)>& job) {
  if (workers <= 1 || n_jobs <= 1) {
    for (std::size_t i = 0; i < n_jobs; ++i) job(i);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t next = 0;
  std::mutex mu;
  const std::size_t n_threads = std::min(workers, n_jobs);
  for (std::size_t t = 0; t < n_threads; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= n_jobs) return;
          i = next++;
        }
        job(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Everything one seed needs: standardized source splits, the standardized
/// target evaluation set, and the model sized for the source count.
struct PreparedRun {
  std::vector<SplitDataset> sources;
  Dataset target_eval;
  Model model;
};

inline PreparedRun prepare_run(const ExperimentSpec& spec, std::uint64_t seed) {
  std::vector<Dataset> injected;
  std::size_t n_domains = spec.domain_params.size();
  if (!spec.data_csv.empty()) {
    injected = load_domains_csv(spec.data_csv);
    n_domains = injected.size();
    if (n_domains < 2) {
      throw std::invalid_argument("prepare_run: injected dataset needs >= 2 domains");
    }
  }
  if (spec.target_domain >= n_domains) {
    throw std::invalid_argument("prepare_run: target_domain out of range");
  }
  std::vector<std::size_t> source_idx;
  for (std::size_t i = 0; i < n_domains; ++i)
    if (i != spec.target_domain) source_idx.push_back(i);

  auto generate = [&](std::size_t domain_idx) {
    if (!injected.empty()) return injected[domain_idx];
    DomainSpec d;
    d.family = spec.family;
    d.domain_param = spec.domain_params[domain_idx];
    d.n_samples = spec.n_samples;
    d.noise_sigma = spec.noise_sigma;
    d.seed = mix_seed(seed, domain_idx);
    return make_domain(d);
  };

  PreparedRun run;
  std::vector<const Dataset*> source_train_views;
  for (std::size_t idx : source_idx) {
    Dataset raw = generate(idx);
    SplitDataset sd = split(raw, spec.split_fraction, mix_seed(seed, 100 + idx));
    sd.train = detail::subsample(sd.train, spec.subsample_fraction);
    run.sources.push_back(std::move(sd));
  }
  for (const auto& sd : run.sources) source_train_views.push_back(&sd.train);

  Standardizer standardizer;
  standardizer.fit(source_train_views);
  for (auto& sd : run.sources) {
    sd.train = standardizer.apply(sd.train);
    sd.val = standardizer.apply(sd.val);
  }

  Dataset target_raw = generate(spec.target_domain);
  SplitDataset target_split =
      split(target_raw, spec.split_fraction, mix_seed(seed, 100 + spec.target_domain));
  run.target_eval = standardizer.apply(target_split.train);

  const std::size_t input_dim = run.target_eval.dim();
  std::size_t num_classes = 0;
  for (const auto& sd : run.sources)
    for (int y : sd.train.y) num_classes = std::max<std::size_t>(num_classes, y + 1);

  const std::size_t n_sources = run.sources.size();
  if (n_sources == 1) {
    const std::size_t heads = std::max<std::size_t>(2, spec.single_source_heads);
    run.model = build_model(input_dim, spec.hidden_dims, spec.feature_dim, num_classes,
                            heads, seed);
    assign_single_source(run.model.bank);
  } else if (n_sources == 2) {
    run.model = build_model(input_dim, spec.hidden_dims, spec.feature_dim, num_classes,
                            4, seed);
    assign_paired_owners(run.model.bank, 2);
  } else {
    run.model = build_model(input_dim, spec.hidden_dims, spec.feature_dim, num_classes,
                            n_sources, seed);
  }
  return run;
}

/// Features of a dataset under the current model parameters.
inline Tensor extract_features(Model& model, const Tensor& x,
                               BnMode mode = BnMode::kEval) {
  Tape tape;
  ModelGraph graph(tape, model);
  return tape.value(graph.features(graph.input(x), mode));
}

/// Trains once per seed, then runs every adaptation method on its own clone
/// of the trained model over an identical target stream.
inline std::vector<ResultRow> run_experiment(const ExperimentSpec& spec,
                                             std::size_t workers = 1) {
  spec.validate();
  const auto methods = spec.method_list();
  std::vector<ResultRow> rows(spec.seeds.size() * methods.size());

  detail::run_jobs(spec.seeds.size(), workers, [&](std::size_t si) {
    const std::uint64_t seed = spec.seeds[si];
    auto fill_failure = [&](const std::string& what) {
      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        ResultRow& row = rows[si * methods.size() + mi];
        row.target_domain = spec.target_domain;
        row.method = to_string(methods[mi].method);
        row.seed = seed;
        row.failed = true;
        row.error = what;
      }
    };

    PreparedRun run;
    TrainConfig cfg = spec.train;
    cfg.seed = seed;
    double train_seconds = 0.0;
    Tensor source_val;
    double frozen_acc = 0.0, coral_before = 0.0;

    // Shift indicator in the test-time forward mode (batch statistics on
    // both sides) so it isolates the effect of the adapted BN affine.
    auto indicator = [&](Model& m) {
      Tape tape;
      Value a = tape.leaf(extract_features(m, source_val, BnMode::kAdapt));
      Value b = tape.leaf(extract_features(m, run.target_eval.x, BnMode::kAdapt));
      return tape.scalar(coral_distance(tape, a, b));
    };

    try {
      run = prepare_run(spec, seed);
      const auto t0 = std::chrono::steady_clock::now();
      train_source_model(run.sources, run.model, cfg);
      train_seconds = detail::seconds_since(t0);

      // Pooled source-validation rows for the shift indicator.
      std::size_t val_total = 0;
      for (const auto& sd : run.sources) val_total += sd.val.size();
      source_val = Tensor({val_total, run.target_eval.dim()});
      std::size_t at = 0;
      for (const auto& sd : run.sources) {
        for (std::size_t i = 0; i < sd.val.size(); ++i, ++at)
          for (std::size_t d = 0; d < sd.val.dim(); ++d) source_val(at, d) = sd.val.x(i, d);
      }

      frozen_acc = evaluate(run.model, run.target_eval, true, BnMode::kEval);
      coral_before = indicator(run.model);
    } catch (const std::exception& e) {
      fill_failure(e.what());
      return;
    }

    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      ResultRow& row = rows[si * methods.size() + mi];
      row.target_domain = spec.target_domain;
      row.method = to_string(methods[mi].method);
      row.seed = seed;
      row.frozen_accuracy = frozen_acc;
      row.coral_indicator_before = coral_before;
      row.train_seconds = train_seconds;
      try {
        auto batches = make_batches(run.target_eval, methods[mi].test_batch_size,
                                    mix_seed(seed, 777), /*drop_last=*/false);
        row.stream_checksum = detail::fnv1a_hex(batches);
        BatchStream stream(std::move(batches));
        Model adapted = run.model;
        const auto t0 = std::chrono::steady_clock::now();
        StreamStats stats = adapt_stream(adapted, stream, methods[mi], cfg.lr);
        row.adapt_seconds = detail::seconds_since(t0);
        row.adapted_accuracy = stats.running_accuracy;
        row.gain = row.adapted_accuracy - row.frozen_accuracy;
        double ds_sum = 0.0;
        for (const auto& r : stats.per_batch) ds_sum += r.ds_before;
        row.mean_ds_target =
            stats.per_batch.empty() ? 0.0 : ds_sum / static_cast<double>(stats.per_batch.size());
        row.coral_indicator_after = indicator(adapted);
        row.wall_time = row.train_seconds + row.adapt_seconds;
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
      }
    }
  });
  return rows;
}

// ---------------------------------------------------------------------------
// Ablation grid

struct AblationRow {
  std::string axis;
  std::string axis_value;
  ResultRow row;
};

inline std::vector<std::string> ablation_axes() {
  return {"lambda", "ds_metric", "batch_size", "steps", "lr_mult",
          "heads_single_source", "num_source_domains"};
}

/// One sub-experiment per axis value, everything else (including seeds) held
/// fixed. Axis values: lambda {0,0.3,0.6,0.9,1.2,1.5}, ds_metric {L1,L2,KL},
/// batch_size {1,64}, steps {1,3,5,7}, lr_mult {0.1,1,10}.
inline std::vector<AblationRow> run_ablation_grid(const ExperimentSpec& base,
                                                  const std::string& axis,
                                                  std::size_t workers = 1) {
  std::vector<std::pair<std::string, ExperimentSpec>> subs;

  auto with = [&](const std::string& label, const std::function<void(ExperimentSpec&)>& edit) {
    ExperimentSpec s = base;
    s.methods = base.method_list();
    edit(s);
    subs.emplace_back(label, std::move(s));
  };

  if (axis == "lambda") {
    for (double v : {0.0, 0.3, 0.6, 0.9, 1.2, 1.5}) {
      with(std::to_string(v), [v](ExperimentSpec& s) { s.train.lambda = v; });
    }
  } else if (axis == "ds_metric") {
    for (DSMetric m : {DSMetric::kL1, DSMetric::kL2, DSMetric::kKL}) {
      with(to_string(m), [m](ExperimentSpec& s) {
        s.train.ds_metric = m;
        for (auto& a : s.methods) a.ds_metric = m;
      });
    }
  } else if (axis == "batch_size") {
    for (std::size_t b : {std::size_t{1}, std::size_t{64}}) {
      with(std::to_string(b), [b](ExperimentSpec& s) {
        for (auto& a : s.methods) a.test_batch_size = b;
      });
    }
  } else if (axis == "steps") {
    for (std::size_t k : {std::size_t{1}, std::size_t{3}, std::size_t{5}, std::size_t{7}}) {
      with(std::to_string(k), [k](ExperimentSpec& s) {
        for (auto& a : s.methods) a.steps_per_batch = k;
      });
    }
  } else if (axis == "lr_mult") {
    for (double v : {0.1, 1.0, 10.0}) {
      with(std::to_string(v), [v](ExperimentSpec& s) {
        for (auto& a : s.methods) a.lr_multiplier = v;
      });
    }
  } else if (axis == "heads_single_source") {
    for (std::size_t h : {std::size_t{2}, std::size_t{3}, std::size_t{5}}) {
      with(std::to_string(h), [h, &base](ExperimentSpec& s) {
        // Keep the first source and the target: single-source protocol.
        std::size_t first_source =
            base.target_domain == 0 ? 1 : 0;
        s.domain_params = {base.domain_params[first_source],
                           base.domain_params[base.target_domain]};
        s.target_domain = 1;
        s.single_source_heads = h;
      });
    }
  } else if (axis == "num_source_domains") {
    const std::size_t max_sources = base.domain_params.size() - 1;
    for (std::size_t k : {std::size_t{2}, std::size_t{3}}) {
      if (k > max_sources) continue;
      with(std::to_string(k), [k, &base](ExperimentSpec& s) {
        std::vector<double> params;
        for (std::size_t i = 0; i < base.domain_params.size() && params.size() < k; ++i) {
          if (i != base.target_domain) params.push_back(base.domain_params[i]);
        }
        params.push_back(base.domain_params[base.target_domain]);
        s.domain_params = params;
        s.target_domain = params.size() - 1;
        // Balance total training samples across source counts (0.6 at k=3).
        s.subsample_fraction = std::min(1.0, 0.6 * 3.0 / static_cast<double>(k));
      });
    }
  } else {
    throw std::invalid_argument("run_ablation_grid: unknown axis '" + axis + "'");
  }

  std::vector<AblationRow> out;
  for (const auto& [label, sub] : subs) {
    const auto rows = run_experiment(sub, workers);
    for (const auto& r : rows) out.push_back(AblationRow{axis, label, r});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature export (t-SNE-ready dump; rendering is out of scope)

inline void export_features(Model& model, const std::vector<Dataset>& domains,
                            const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("export_features: cannot open " + path);
  const std::size_t f = model.extractor.feature_dim;
  for (std::size_t d = 0; d < f; ++d) os << 'f' << d << ',';
  os << "label,domain\n";
  char buf[40];
  for (std::size_t dom = 0; dom < domains.size(); ++dom) {
    const Tensor feats = extract_features(model, domains[dom].x);
    for (std::size_t i = 0; i < feats.rows(); ++i) {
      for (std::size_t d = 0; d < f; ++d) {
        std::snprintf(buf, sizeof(buf), "%.17g", feats(i, d));
        os << buf << ',';
      }
      os << domains[dom].y[i] << ',' << dom << '\n';
    }
  }
  if (!os) throw std::runtime_error("export_features: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Result persistence

inline void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows,
                              const std::string& axis_header = "",
                              const std::vector<std::pair<std::string, std::string>>* axis_values = nullptr) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_results_csv: cannot open " + path);
  if (!axis_header.empty()) os << "axis,axis_value,";
  os << "target_domain,method,seed,frozen_accuracy,adapted_accuracy,gain,"
        "mean_ds_target,coral_indicator_before,coral_indicator_after,"
        "stream_checksum,failed,error\n";
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << ',' << buf;
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const ResultRow& r = rows[i];
    if (axis_values) os << (*axis_values)[i].first << ',' << (*axis_values)[i].second << ',';
    os << r.target_domain << ',' << r.method << ',' << r.seed;
    put(r.frozen_accuracy);
    put(r.adapted_accuracy);
    put(r.gain);
    put(r.mean_ds_target);
    put(r.coral_indicator_before);
    put(r.coral_indicator_after);
    std::string error = r.error;
    for (char& c : error)
      if (c == ',' || c == '\n') c = ';';
    os << ',' << r.stream_checksum << ',' << (r.failed ? 1 : 0) << ',' << error << '\n';
  }
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::vector<ResultRow> flat;
  std::vector<std::pair<std::string, std::string>> axes;
  for (const auto& r : rows) {
    flat.push_back(r.row);
    axes.emplace_back(r.axis, r.axis_value);
  }
  write_results_csv(path, flat, "axis", &axes);
}

/// Wall-clock timings live in their own file: they are reporting output, not
/// part of the bit-exact result contract.
inline void write_timings_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_timings_csv: cannot open " + path);
  os << "target_domain,method,seed,train_seconds,adapt_seconds,wall_time\n";
  char buf[40];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f", r.train_seconds, r.adapt_seconds,
                  r.wall_time);
    os << r.target_domain << ',' << r.method << ',' << r.seed << ',' << buf << '\n';
  }
}

/// Long-format per-run gains (box-plot raw data).
inline void write_gains_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_gains_csv: cannot open " + path);
  os << "target_domain,method,seed,gain\n";
  char buf[40];
  for (const auto& r : rows) {
    if (r.failed) continue;
    std::snprintf(buf, sizeof(buf), "%.17g", r.gain);
    os << r.target_domain << ',' << r.method << ',' << r.seed << ',' << buf << '\n';
  }
}

struct MethodSummary {
  std::string method;
  std::size_t n = 0;
  double mean_frozen = 0.0;
  double mean_adapted = 0.0;
  double mean_gain = 0.0;
  double stderr_gain = 0.0;
};

/// Mean and standard error over seeds, per method. stderr uses the unbiased
/// sample standard deviation divided by sqrt(n).
inline std::vector<MethodSummary> summarize(const std::vector<ResultRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) {
    if (r.failed) continue;
    if (!groups.count(r.method)) order.push_back(r.method);
    groups[r.method].push_back(&r);
  }
  std::vector<MethodSummary> out;
  for (const auto& m : order) {
    const auto& g = groups[m];
    MethodSummary s;
    s.method = m;
    s.n = g.size();
    for (const auto* r : g) {
      s.mean_frozen += r->frozen_accuracy;
      s.mean_adapted += r->adapted_accuracy;
      s.mean_gain += r->gain;
    }
    const double n = static_cast<double>(s.n);
    s.mean_frozen /= n;
    s.mean_adapted /= n;
    s.mean_gain /= n;
    if (s.n > 1) {
      double ss = 0.0;
      for (const auto* r : g) ss += (r->gain - s.mean_gain) * (r->gain - s.mean_gain);
      s.stderr_gain = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace adaodm
