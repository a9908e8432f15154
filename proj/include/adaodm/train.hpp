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

namespace adaodm {

struct TrainConfig {
  std::size_t steps = 1500;
  std::size_t batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lambda = 0.5;  // DS weight, midpoint of the U(0,1) search range
  double gamma = 0.01;  // entropy-regularizer weight
  double eta = 1.0;     // gradient-reversal ratio, midpoint of U(0,2)
  DSMetric ds_metric = DSMetric::kL1;
  enum class BaseDG { kErm, kCoral };
  BaseDG base_dg = BaseDG::kErm;
  double coral_weight = 1.0;
  std::uint64_t seed = 0;
  std::size_t val_interval = 50;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
    if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
    if (lambda < 0 || eta < 0 || gamma < 0) {
      throw std::invalid_argument("TrainConfig: lambda, eta, gamma must be >= 0");
    }
  }
};

struct TrainRecord {
  std::size_t step = 0;
  LossBreakdown loss;
  double coral = 0.0;
  std::vector<double> per_domain_acc;
  double val_acc = 0.0;
};

/// Thrown when the training loss goes non-finite; carries the step and the
/// component values for diagnostics.
class NanLossError : public std::runtime_error {
 public:
  NanLossError(std::size_t step, const LossBreakdown& loss)
      : std::runtime_error("non-finite training loss at step " + std::to_string(step) +
                           " (erm=" + std::to_string(loss.erm) +
                           ", ds=" + std::to_string(loss.ds) +
                           ", et=" + std::to_string(loss.et) + ")"),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Argmax predictions; aggregate mode sums every head's logits first.
/// Ties break to the lowest class index.
inline std::vector<int> predict(Model& model, const Tensor& x, bool aggregate,
                                BnMode mode = BnMode::kEval,
                                std::optional<std::size_t> head = std::nullopt) {
  Tape tape;
  ModelGraph graph(tape, model);
  Value s = graph.features(graph.input(x), mode);
  Value logits = aggregate ? graph.aggregate_logits(s)
                           : graph.head_logits(head.value_or(0), s);
  const Tensor& lv = tape.value(logits);
  std::vector<int> out(lv.rows());
  for (std::size_t i = 0; i < lv.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < lv.cols(); ++c)
      if (lv(i, c) > lv(i, best)) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

inline double evaluate(Model& model, const Tensor& x, const std::vector<int>& y,
                       bool aggregate, BnMode mode = BnMode::kEval,
                       std::optional<std::size_t> head = std::nullopt) {
  const auto preds = predict(model, x, aggregate, mode, head);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == y[i]) ++correct;
  return y.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(y.size());
}

inline double evaluate(Model& model, const Dataset& ds, bool aggregate,
                       BnMode mode = BnMode::kEval) {
  return evaluate(model, ds.x, ds.y, aggregate, mode);
}

struct TrainResult {
  std::vector<TrainRecord> records;
  double best_val_acc = 0.0;
  std::size_t best_step = 0;
};

/// Algorithm of record for source training: every step draws one batch per
/// source domain, builds the adversarial objective, and applies SGD to all
/// parameter groups. The returned model carries the parameters of the
/// checkpoint with the best aggregate validation accuracy.
inline TrainResult train_source_model(const std::vector<SplitDataset>& domains, Model& model,
                                      const TrainConfig& cfg) {
  cfg.validate();
  if (domains.empty()) throw std::invalid_argument("train_source_model: no source domains");
  for (const auto& d : domains) {
    if (d.train.size() == 0) {
      throw std::invalid_argument("train_source_model: empty domain training split");
    }
  }

  std::vector<EpochBatcher> batchers;
  batchers.reserve(domains.size());
  for (std::size_t d = 0; d < domains.size(); ++d) {
    batchers.emplace_back(domains[d].train, cfg.batch_size, mix_seed(cfg.seed, d),
                          static_cast<int>(d));
  }

  auto validation_accuracy = [&]() {
    std::size_t correct = 0, total = 0;
    for (const auto& dom : domains) {
      const auto preds = predict(model, dom.val.x, true, BnMode::kEval);
      for (std::size_t i = 0; i < preds.size(); ++i)
        correct += preds[i] == dom.val.y[i] ? 1 : 0;
      total += dom.val.size();
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  };

  SgdOptimizer opt(all_params(model), cfg.lr, cfg.momentum, cfg.weight_decay);

  TrainResult result;
  Model best = model;
  double best_val = -1.0;
  std::size_t best_step = 0;

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<DomainBatch> batches;
    batches.reserve(domains.size());
    for (auto& b : batchers) batches.push_back(b.next());

    Tape tape;
    ModelGraph graph(tape, model);
    TrainingLoss tl =
        total_training_loss(graph, batches, cfg.lambda, cfg.gamma, cfg.eta, cfg.ds_metric);

    Value root = tl.root;
    double coral_val = 0.0;
    if (cfg.base_dg == TrainConfig::BaseDG::kCoral && cfg.coral_weight != 0.0 &&
        batches.size() >= 2) {
      // Pairwise feature alignment between source domains, on the same
      // train-mode features the losses saw.
      const std::vector<Value>& feats = tl.domain_features;
      Value coral_sum{};
      for (std::size_t a = 0; a < feats.size(); ++a)
        for (std::size_t b = a + 1; b < feats.size(); ++b) {
          Value c = coral_distance(tape, feats[a], feats[b]);
          coral_sum = coral_sum.valid() ? add(tape, coral_sum, c) : c;
        }
      coral_val = tape.scalar(coral_sum);
      root = add(tape, root, scale_by(tape, coral_sum, cfg.coral_weight));
    }

    if (!std::isfinite(tape.scalar(root))) throw NanLossError(step, tl.breakdown);

    tape.backward(root);
    opt.step(graph);

    if (step % cfg.val_interval == 0 || step == cfg.steps) {
      TrainRecord rec;
      rec.step = step;
      rec.loss = tl.breakdown;
      rec.coral = coral_val;
      for (const auto& batch : batches) {
        rec.per_domain_acc.push_back(evaluate(model, batch.x, batch.y, true, BnMode::kEval));
      }
      rec.val_acc = validation_accuracy();
      if (rec.val_acc > best_val) {
        best_val = rec.val_acc;
        best = model;
        best_step = step;
      }
      result.records.push_back(std::move(rec));
    }
  }

  model = best;
  result.best_val_acc = best_val;
  result.best_step = best_step;
  return result;
}

// ---------------------------------------------------------------------------
// TrainRecord CSV emission

inline void write_train_records_csv(const std::string& path,
                                    const std::vector<TrainRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_train_records_csv: cannot open " + path);
  std::size_t n_domains = 0;
  for (const auto& r : records) n_domains = std::max(n_domains, r.per_domain_acc.size());
  os << "step,erm,ds,et,total,coral,val_acc";
  for (std::size_t d = 0; d < n_domains; ++d) os << ",train_acc_d" << d;
  os << '\n';
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << ',' << buf;
  };
  for (const auto& r : records) {
    os << r.step;
    put(r.loss.erm);
    put(r.loss.ds);
    put(r.loss.et);
    put(r.loss.total);
    put(r.coral);
    put(r.val_acc);
    for (double a : r.per_domain_acc) put(a);
    os << '\n';
  }
}

}  // namespace adaodm
