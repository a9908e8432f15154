#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaodm/data.hpp"
#include "adaodm/model.hpp"
#include "adaodm/objectives.hpp"
#include "adaodm/optimizer.hpp"
#include "adaodm/train.hpp"

namespace adaodm {

struct AdaptConfig {
  enum class Method { kNone, kAdaODM, kTent, kPL };

  Method method = Method::kAdaODM;
  std::size_t test_batch_size = 64;
  std::size_t steps_per_batch = 1;
  double lr_multiplier = 1.0;  // applied to the training lr
  bool reset_per_batch = false;
  DSMetric ds_metric = DSMetric::kL1;
  double pl_threshold = 0.9;
  // Tent convention: test-time forwards normalize by current-batch
  // statistics. Set false to adapt against the running statistics instead.
  bool bn_batch_stats = true;

  void validate() const {
    if (steps_per_batch < 1) {
      throw std::invalid_argument("AdaptConfig: steps_per_batch must be >= 1");
    }
    if (test_batch_size < 1) {
      throw std::invalid_argument("AdaptConfig: test_batch_size must be >= 1");
    }
  }
};

inline const char* to_string(AdaptConfig::Method m) {
  switch (m) {
    case AdaptConfig::Method::kNone: return "none";
    case AdaptConfig::Method::kAdaODM: return "adaodm";
    case AdaptConfig::Method::kTent: return "tent";
    case AdaptConfig::Method::kPL: return "pl";
  }
  return "?";
}

inline AdaptConfig::Method adapt_method_from_string(const std::string& s) {
  if (s == "none") return AdaptConfig::Method::kNone;
  if (s == "adaodm") return AdaptConfig::Method::kAdaODM;
  if (s == "tent") return AdaptConfig::Method::kTent;
  if (s == "pl") return AdaptConfig::Method::kPL;
  throw std::invalid_argument("unknown adaptation method '" + s + "'");
}

/// Consuming one-pass batch stream. Each batch can be taken exactly once;
/// asking again is a contract violation and throws.
class BatchStream {
 public:
  explicit BatchStream(std::vector<DomainBatch> batches)
      : batches_(std::move(batches)) {}

  bool has_next() const { return cursor_ < batches_.size(); }

  DomainBatch next() {
    if (!has_next()) {
      throw std::logic_error("BatchStream: stream exhausted (one-pass contract)");
    }
    DomainBatch b = std::move(batches_[cursor_]);
    batches_[cursor_].x = Tensor{};  // leave nothing to re-read
    batches_[cursor_].y.clear();
    ++cursor_;
    return b;
  }

  std::size_t total_batches() const { return batches_.size(); }
  std::size_t consumed() const { return cursor_; }

 private:
  std::vector<DomainBatch> batches_;
  std::size_t cursor_ = 0;
};

struct BatchAdaptRecord {
  std::size_t batch_index = 0;
  std::size_t batch_size = 0;
  double ds_before = 0.0;
  double ds_after = 0.0;
  double loss = 0.0;  // adaptation loss at the final step on this batch
  double accuracy_so_far = 0.0;
};

struct StreamStats {
  std::size_t batches_seen = 0;
  std::size_t samples_seen = 0;
  double running_accuracy = 0.0;  // over all samples seen so far
  std::vector<BatchAdaptRecord> per_batch;
};

/// Disagreement score of the bank's heads on one batch, without recording
/// gradients or touching any state. Used as a distribution-shift monitor.
inline double ds_monitor(Model& model, const Tensor& x, DSMetric metric = DSMetric::kL1,
                         BnMode mode = BnMode::kAdapt) {
  Tape tape;
  ModelGraph graph(tape, model);
  Value s = graph.features(graph.input(x), mode);
  return tape.scalar(ds_test(graph, s, metric));
}

/// One pass of streaming test-time adaptation (Tent and PL run under the
/// identical harness). Labels carried in the stream batches are consulted
/// only for scoring; no adaptation loss ever sees them.
///
/// adaodm/tent update only the extractor's BN scale/shift; pl updates the
/// whole network; none performs pure frozen inference in eval mode.
inline StreamStats adapt_stream(Model& model, BatchStream& stream, const AdaptConfig& cfg,
                                double base_lr) {
  cfg.validate();
  using Method = AdaptConfig::Method;

  std::vector<Tensor*> trainable;
  switch (cfg.method) {
    case Method::kNone: break;
    case Method::kAdaODM:
    case Method::kTent: trainable = select_params(model, "extractor_bn_affine"); break;
    case Method::kPL: trainable = all_params(model); break;
  }
  std::optional<SgdOptimizer> opt;
  if (!trainable.empty()) {
    opt.emplace(trainable, base_lr * cfg.lr_multiplier);
  }

  auto snapshot = [&]() {
    std::vector<Tensor> s;
    s.reserve(trainable.size());
    for (Tensor* p : trainable) s.push_back(*p);
    return s;
  };
  std::vector<Tensor> initial;
  if (cfg.reset_per_batch) initial = snapshot();

  StreamStats stats;
  std::size_t correct = 0;
  // DS is undefined on a vanilla single-head model; baselines still run,
  // they just log zero disagreement.
  const bool monitor_ds = model.bank.num_heads() >= 2;
  const BnMode adapt_mode = cfg.bn_batch_stats ? BnMode::kAdapt : BnMode::kEval;

  while (stream.has_next()) {
    const DomainBatch batch = stream.next();
    BatchAdaptRecord rec;
    rec.batch_index = stats.batches_seen;
    rec.batch_size = batch.size();
    rec.ds_before =
        monitor_ds ? ds_monitor(model, batch.x, cfg.ds_metric, adapt_mode) : 0.0;

    if (cfg.method != Method::kNone) {
      for (std::size_t it = 0; it < cfg.steps_per_batch; ++it) {
        Tape tape;
        ModelGraph graph(tape, model);
        Value s = graph.features(graph.input(batch.x), adapt_mode);
        Value loss{};
        switch (cfg.method) {
          case Method::kAdaODM:
            loss = ds_test(graph, s, cfg.ds_metric);
            break;
          case Method::kTent:
            loss = prediction_entropy(tape, softmax(tape, graph.aggregate_logits(s)));
            break;
          case Method::kPL: {
            Value probs = softmax(tape, graph.aggregate_logits(s));
            loss = pseudo_label_loss(tape, probs, cfg.pl_threshold).loss;
            break;
          }
          case Method::kNone: break;
        }
        rec.loss = tape.scalar(loss);
        tape.backward(loss);
        if (opt) opt->step(graph);
      }
    }

    rec.ds_after = (cfg.method == Method::kNone || !monitor_ds)
                       ? rec.ds_before
                       : ds_monitor(model, batch.x, cfg.ds_metric, adapt_mode);

    // Predict after the batch's final adaptation step. Frozen inference uses
    // eval mode (running stats); adapted methods predict with the same
    // forward mode the adaptation saw.
    const BnMode predict_mode = cfg.method == Method::kNone ? BnMode::kEval : adapt_mode;
    const auto preds = predict(model, batch.x, true, predict_mode);
    for (std::size_t i = 0; i < preds.size(); ++i)
      correct += preds[i] == batch.y[i] ? 1 : 0;

    stats.batches_seen += 1;
    stats.samples_seen += batch.size();
    stats.running_accuracy =
        static_cast<double>(correct) / static_cast<double>(stats.samples_seen);
    rec.accuracy_so_far = stats.running_accuracy;
    stats.per_batch.push_back(rec);

    if (cfg.reset_per_batch && !trainable.empty()) {
      for (std::size_t i = 0; i < trainable.size(); ++i) *trainable[i] = initial[i];
    }
  }
  return stats;
}

/// Convenience wrapper for the batch-size-1 ablation: identical contract to
/// adapt_stream, each sample its own batch (BN falls back to running stats).
inline StreamStats batch_size_one_mode(Model& model, BatchStream& stream,
                                       AdaptConfig cfg, double base_lr) {
  cfg.test_batch_size = 1;
  return adapt_stream(model, stream, cfg, base_lr);
}

inline void write_adapt_records_csv(const std::string& path, const StreamStats& stats) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_adapt_records_csv: cannot open " + path);
  os << "batch_index,ds_before,ds_after,loss,accuracy_so_far,batch_size\n";
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << ',' << buf;
  };
  for (const auto& r : stats.per_batch) {
    os << r.batch_index;
    put(r.ds_before);
    put(r.ds_after);
    put(r.loss);
    put(r.accuracy_so_far);
    os << ',' << r.batch_size << '\n';
  }
}

}  // namespace adaodm
