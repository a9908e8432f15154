#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "adaodm/data.hpp"
#include "adaodm/model.hpp"
#include "adaodm/ops.hpp"
#include "adaodm/tape.hpp"

namespace adaodm {

/// Distance used between two classifiers' softmax outputs. L1 is the
/// default; KL is the symmetrized (Jeffreys) form so the score stays
/// symmetric in its arguments.
enum class DSMetric { kL1, kL2, kKL };

inline const char* to_string(DSMetric m) {
  switch (m) {
    case DSMetric::kL1: return "L1";
    case DSMetric::kL2: return "L2";
    case DSMetric::kKL: return "KL";
  }
  return "?";
}

inline DSMetric ds_metric_from_string(const std::string& s) {
  if (s == "L1" || s == "l1") return DSMetric::kL1;
  if (s == "L2" || s == "l2") return DSMetric::kL2;
  if (s == "KL" || s == "kl") return DSMetric::kKL;
  throw std::invalid_argument("unknown DS metric '" + s + "' (expected L1, L2, or KL)");
}

/// Mean over the batch of the chosen distance between two probability rows.
inline Value ds_pair(Tape& t, Value p, Value q, DSMetric metric) {
  const Tensor& pv = t.value(p);
  const Tensor& qv = t.value(q);
  check_same_shape(pv, qv, "ds_pair");
  const std::size_t batch = pv.rows(), classes = pv.cols();
  const double inv_b = 1.0 / static_cast<double>(batch);

  double val = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t c = 0; c < classes; ++c) {
      const double a = pv(i, c), b = qv(i, c);
      switch (metric) {
        case DSMetric::kL1: val += std::fabs(a - b); break;
        case DSMetric::kL2: val += (a - b) * (a - b); break;
        case DSMetric::kKL:
          val += 0.5 * (a - b) *
                 (std::log(std::max(a, kEpsLog)) - std::log(std::max(b, kEpsLog)));
          break;
      }
    }
  }
  val *= inv_b;

  Value o = t.push(Tensor::scalar(val));
  t.set_backprop(o, [o, p, q, metric, inv_b](Tape& tp) {
    const double g = tp.grad(o)[0] * inv_b;
    const Tensor& pv = tp.value(p);
    const Tensor& qv = tp.value(q);
    Tensor& gp = tp.grad_mut(p);
    Tensor& gq = tp.grad_mut(q);
    for (std::size_t i = 0; i < pv.numel(); ++i) {
      const double a = pv[i], b = qv[i];
      switch (metric) {
        case DSMetric::kL1: {
          const double s = a > b ? 1.0 : (a < b ? -1.0 : 0.0);
          gp[i] += g * s;
          gq[i] -= g * s;
          break;
        }
        case DSMetric::kL2: {
          gp[i] += g * 2.0 * (a - b);
          gq[i] -= g * 2.0 * (a - b);
          break;
        }
        case DSMetric::kKL: {
          const double at = std::max(a, kEpsLog), bt = std::max(b, kEpsLog);
          const double log_ratio = std::log(at) - std::log(bt);
          gp[i] += g * 0.5 * (log_ratio + (a - b) * (a > kEpsLog ? 1.0 / at : 0.0));
          gq[i] += g * 0.5 * (-log_ratio - (a - b) * (b > kEpsLog ? 1.0 / bt : 0.0));
          break;
        }
      }
    }
  });
  return o;
}

/// Test-time disagreement score: sum of ds_pair over all unordered head
/// pairs (j, k), j < k, on shared features. Optionally reports per-pair
/// values.
inline Value ds_test(ModelGraph& g, Value features, DSMetric metric,
                     std::map<std::pair<int, int>, double>* per_pair = nullptr) {
  const std::size_t n_heads = g.model().bank.num_heads();
  if (n_heads < 2) {
    throw std::invalid_argument("ds_test: needs >= 2 heads, model has " +
                                std::to_string(n_heads));
  }
  Tape& t = g.tape();
  std::vector<Value> probs(n_heads);
  for (std::size_t d = 0; d < n_heads; ++d)
    probs[d] = softmax(t, g.head_logits(d, features));

  Value sum{};
  for (std::size_t j = 0; j < n_heads; ++j) {
    for (std::size_t k = j + 1; k < n_heads; ++k) {
      Value pair = ds_pair(t, probs[j], probs[k], metric);
      if (per_pair) {
        (*per_pair)[{static_cast<int>(j), static_cast<int>(k)}] = t.scalar(pair);
      }
      sum = sum.valid() ? add(t, sum, pair) : pair;
    }
  }
  return sum;
}

/// Heads eligible for the training-time disagreement score on a batch from
/// meta-source domain d: every head not owned by d. In single-source mode
/// (all heads owned by one domain) the exclusion is disabled and all heads
/// participate.
inline std::vector<std::size_t> meta_target_heads(const ClassifierBank& bank,
                                                  int meta_source) {
  std::vector<std::size_t> eligible;
  for (std::size_t h = 0; h < bank.num_heads(); ++h)
    if (bank.owner[h] != meta_source) eligible.push_back(h);
  if (eligible.empty()) {
    // Single-source variant: disagreement is computed over all heads.
    for (std::size_t h = 0; h < bank.num_heads(); ++h) eligible.push_back(h);
  }
  if (eligible.size() < 2) {
    throw std::invalid_argument(
        "ds_train: meta-source exclusion leaves fewer than 2 heads; train with two "
        "differently-initialized heads per source domain (paired-initialization mode)");
  }
  return eligible;
}

/// Training-time disagreement score on a meta-source batch: ds_test
/// restricted to meta-target head pairs. When reverse_eta is set, head
/// parameters are routed through a gradient reversal with that eta.
inline Value ds_train(ModelGraph& g, Value features, int meta_source, DSMetric metric,
                      std::optional<double> reverse_eta = std::nullopt,
                      std::map<std::pair<int, int>, double>* per_pair = nullptr) {
  Tape& t = g.tape();
  const auto eligible = meta_target_heads(g.model().bank, meta_source);

  std::vector<Value> probs(eligible.size());
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    Value logits = reverse_eta ? g.head_logits_reversed(eligible[i], features, *reverse_eta)
                               : g.head_logits(eligible[i], features);
    probs[i] = softmax(t, logits);
  }

  Value sum{};
  for (std::size_t a = 0; a < eligible.size(); ++a) {
    for (std::size_t b = a + 1; b < eligible.size(); ++b) {
      Value pair = ds_pair(t, probs[a], probs[b], metric);
      if (per_pair) {
        const auto key = std::make_pair(static_cast<int>(eligible[a]),
                                        static_cast<int>(eligible[b]));
        (*per_pair)[key] += t.scalar(pair);
      }
      sum = sum.valid() ? add(t, sum, pair) : pair;
    }
  }
  return sum;
}

/// -(1/C) sum_c log(batch mean of probs[.,c]). Minimized (= ln C) when the
/// batch-mean prediction is uniform.
inline Value entropy_reg(Tape& t, Value probs) {
  const Tensor& pv = t.value(probs);
  const std::size_t batch = pv.rows(), classes = pv.cols();
  std::vector<double> mean(classes, 0.0);
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t c = 0; c < classes; ++c) mean[c] += pv(i, c);
  double val = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    mean[c] /= static_cast<double>(batch);
    val -= std::log(std::max(mean[c], kEpsLog));
  }
  val /= static_cast<double>(classes);

  Value o = t.push(Tensor::scalar(val));
  t.set_backprop(o, [o, probs, mean](Tape& tp) {
    const double g = tp.grad(o)[0];
    const Tensor& pv = tp.value(probs);
    Tensor& gp = tp.grad_mut(probs);
    const double scale = -g / (static_cast<double>(pv.cols()) * static_cast<double>(pv.rows()));
    for (std::size_t c = 0; c < pv.cols(); ++c) {
      if (mean[c] <= kEpsLog) continue;
      for (std::size_t i = 0; i < pv.rows(); ++i) gp(i, c) += scale / mean[c];
    }
  });
  return o;
}

/// Mean over the batch of Shannon entropy -sum_c p log p (the Tent
/// objective).
inline Value prediction_entropy(Tape& t, Value probs) {
  const Tensor& pv = t.value(probs);
  const double inv_b = 1.0 / static_cast<double>(pv.rows());
  double val = 0.0;
  for (std::size_t i = 0; i < pv.numel(); ++i)
    val -= pv[i] * std::log(std::max(pv[i], kEpsLog));
  val *= inv_b;

  Value o = t.push(Tensor::scalar(val));
  t.set_backprop(o, [o, probs, inv_b](Tape& tp) {
    const double g = tp.grad(o)[0] * inv_b;
    const Tensor& pv = tp.value(probs);
    Tensor& gp = tp.grad_mut(probs);
    for (std::size_t i = 0; i < pv.numel(); ++i) {
      const double p = pv[i];
      const double dlog = p > kEpsLog ? 1.0 : 0.0;
      gp[i] += g * (-std::log(std::max(p, kEpsLog)) - dlog);
    }
  });
  return o;
}

struct PseudoLabelLoss {
  Value loss;
  std::size_t kept = 0;
};

/// Cross-entropy against argmax pseudo-labels, restricted to rows whose max
/// probability reaches the threshold. Zero loss when no row qualifies.
inline PseudoLabelLoss pseudo_label_loss(Tape& t, Value probs, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("pseudo_label_loss: threshold must be in (0,1)");
  }
  const Tensor& pv = t.value(probs);
  const std::size_t batch = pv.rows(), classes = pv.cols();
  std::vector<std::size_t> kept_rows;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < batch; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (pv(i, c) > pv(i, best)) best = c;
    if (pv(i, best) >= threshold) {
      kept_rows.push_back(i);
      labels.push_back(best);
    }
  }
  if (kept_rows.empty()) {
    return {t.leaf(Tensor::scalar(0.0)), 0};
  }
  const double inv_k = 1.0 / static_cast<double>(kept_rows.size());
  double val = 0.0;
  for (std::size_t r = 0; r < kept_rows.size(); ++r)
    val -= std::log(std::max(pv(kept_rows[r], labels[r]), kEpsLog));
  val *= inv_k;

  Value o = t.push(Tensor::scalar(val));
  t.set_backprop(o, [o, probs, kept_rows, labels, inv_k](Tape& tp) {
    const double g = tp.grad(o)[0] * inv_k;
    const Tensor& pv = tp.value(probs);
    Tensor& gp = tp.grad_mut(probs);
    for (std::size_t r = 0; r < kept_rows.size(); ++r) {
      const double p = pv(kept_rows[r], labels[r]);
      if (p > kEpsLog) gp(kept_rows[r], labels[r]) -= g / p;
    }
  });
  return {o, kept_rows.size()};
}

/// Squared distance between feature means plus squared Frobenius distance
/// between unbiased feature covariances. Used both as the CORAL training
/// regularizer and as the source/target shift indicator.
inline Value coral_distance(Tape& t, Value feats_a, Value feats_b) {
  const Tensor& av = t.value(feats_a);
  const Tensor& bv = t.value(feats_b);
  if (av.cols() != bv.cols()) {
    throw std::invalid_argument("coral_distance: width mismatch " + av.shape_string() +
                                " vs " + bv.shape_string());
  }
  if (av.rows() < 2 || bv.rows() < 2) {
    throw std::invalid_argument("coral_distance: each side needs >= 2 rows");
  }
  const std::size_t f = av.cols();

  auto center = [f](const Tensor& x, std::vector<double>& mean) {
    mean.assign(f, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t d = 0; d < f; ++d) mean[d] += x(i, d);
    for (auto& m : mean) m /= static_cast<double>(x.rows());
    Tensor c({x.rows(), f});
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t d = 0; d < f; ++d) c(i, d) = x(i, d) - mean[d];
    return c;
  };

  std::vector<double> mean_a, mean_b;
  Tensor ac = center(av, mean_a);
  Tensor bc = center(bv, mean_b);

  auto covariance = [f](const Tensor& c) {
    Tensor cov({f, f});
    detail::matmul_at(c, c, cov);
    const double inv = 1.0 / static_cast<double>(c.rows() - 1);
    for (auto& v : cov.data()) v *= inv;
    return cov;
  };
  Tensor cov_a = covariance(ac);
  Tensor cov_b = covariance(bc);

  double val = 0.0;
  for (std::size_t d = 0; d < f; ++d) {
    const double dm = mean_a[d] - mean_b[d];
    val += dm * dm;
  }
  Tensor cov_diff({f, f});
  for (std::size_t i = 0; i < f * f; ++i) {
    cov_diff[i] = cov_a[i] - cov_b[i];
    val += cov_diff[i] * cov_diff[i];
  }

  Value o = t.push(Tensor::scalar(val));
  t.set_backprop(o, [o, feats_a, feats_b, ac, bc, cov_diff, mean_a, mean_b](Tape& tp) {
    const double g = tp.grad(o)[0];
    const std::size_t f = ac.cols();

    auto accumulate = [&](Value side, const Tensor& centered,
                          const std::vector<double>& mean_self,
                          const std::vector<double>& mean_other, double sign) {
      Tensor& grad = tp.grad_mut(side);
      const std::size_t n = centered.rows();
      // Covariance term: d/dCentered = sign * 4/(n-1) * Centered * cov_diff,
      // then project through the row-centering.
      Tensor gc({n, f});
      detail::matmul(centered, cov_diff, gc);
      const double k = sign * 4.0 / static_cast<double>(n - 1);
      for (auto& v : gc.data()) v *= k;
      std::vector<double> col_mean(f, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < f; ++d) col_mean[d] += gc(i, d);
      for (auto& m : col_mean) m /= static_cast<double>(n);
      // Mean term: 2/n * (mean_self - mean_other) on every row.
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < f; ++d) {
          const double mean_term =
              2.0 * (mean_self[d] - mean_other[d]) / static_cast<double>(n);
          grad(i, d) += g * (gc(i, d) - col_mean[d] + mean_term);
        }
      }
    };

    accumulate(feats_a, ac, mean_a, mean_b, +1.0);
    accumulate(feats_b, bc, mean_b, mean_a, -1.0);
  });
  return o;
}

// ---------------------------------------------------------------------------
// Total adversarial training objective

struct LossBreakdown {
  double erm = 0.0;
  double ds = 0.0;
  double et = 0.0;
  double total = 0.0;
  std::map<std::pair<int, int>, double> per_pair_ds;
};

struct TrainingLoss {
  Value root;  // scalar to backpropagate
  LossBreakdown breakdown;
  std::vector<Value> domain_features;  // train-mode features, one per input batch
};

/// Builds the full training objective on the graph's tape:
///
///   sum over domains of (ERM + gamma * ET) + lambda * DS_train,
///
/// where the DS term sees meta-target head parameters through a gradient
/// reversal with ratio eta: the extractor receives +lambda * dDS while those
/// heads receive -lambda * eta * dDS. lambda == 0 (or gamma == 0) skips the
/// corresponding subgraph entirely so the ablated run is bit-identical to a
/// model trained without that term.
inline TrainingLoss total_training_loss(ModelGraph& g,
                                        const std::vector<DomainBatch>& batches,
                                        double lambda, double gamma, double eta,
                                        DSMetric metric) {
  if (batches.empty()) throw std::invalid_argument("total_training_loss: no domain batches");
  ClassifierBank& bank = g.model().bank;
  for (const auto& b : batches) {
    if (b.domain < 0) throw std::invalid_argument("total_training_loss: batch missing domain index");
    bool owned = false;
    for (int o : bank.owner) owned |= (o == b.domain);
    if (!owned) {
      throw std::invalid_argument("total_training_loss: no head owns domain " +
                                  std::to_string(b.domain));
    }
  }

  Tape& t = g.tape();
  TrainingLoss out;
  Value erm_sum{}, et_sum{}, ds_sum{};

  for (const auto& batch : batches) {
    Value x = g.input(batch.x);
    Value s = g.features(x, BnMode::kTrain);
    out.domain_features.push_back(s);

    for (std::size_t h = 0; h < bank.num_heads(); ++h) {
      if (bank.owner[h] != batch.domain) continue;
      Value probs = softmax(t, g.head_logits(h, s));
      Value erm = cross_entropy(t, probs, batch.y);
      erm_sum = erm_sum.valid() ? add(t, erm_sum, erm) : erm;
      if (gamma != 0.0) {
        Value et = entropy_reg(t, probs);
        et_sum = et_sum.valid() ? add(t, et_sum, et) : et;
      }
    }

    if (lambda != 0.0) {
      Value ds = ds_train(g, s, batch.domain, metric, eta, &out.breakdown.per_pair_ds);
      ds_sum = ds_sum.valid() ? add(t, ds_sum, ds) : ds;
    }
  }

  out.breakdown.erm = t.scalar(erm_sum);
  Value total = erm_sum;
  if (et_sum.valid()) {
    out.breakdown.et = t.scalar(et_sum);
    total = add(t, total, scale_by(t, et_sum, gamma));
  }
  if (ds_sum.valid()) {
    out.breakdown.ds = t.scalar(ds_sum);
    total = add(t, total, scale_by(t, ds_sum, lambda));
  }
  out.breakdown.total = t.scalar(total);
  out.root = total;
  return out;
}

}  // namespace adaodm
