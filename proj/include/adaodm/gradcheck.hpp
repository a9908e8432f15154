#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "adaodm/tape.hpp"
#include "adaodm/tensor.hpp"

namespace adaodm {

/// A differentiable scalar function of a list of parameter tensors. The
/// builder must be pure: same parameters, same tape graph.
using ScalarFn = std::function<Value(Tape&, const std::vector<Value>&)>;

/// Central finite differences vs. tape gradients, per coordinate.
/// Returns the max relative error with denominator max(|a|, |b|, 1e-8).
///
/// Caveat: the function must be twice differentiable at params; perturb away
/// from ReLU kinks when composing through relu().
inline double grad_check(const ScalarFn& f, std::vector<Tensor> params,
                         double h = 1e-5) {
  auto eval = [&](const std::vector<Tensor>& ps) {
    Tape tape;
    std::vector<Value> leaves;
    leaves.reserve(ps.size());
    for (const auto& p : ps) leaves.push_back(tape.leaf(p));
    return tape.scalar(f(tape, leaves));
  };

  // Analytic gradients once.
  Tape tape;
  std::vector<Value> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  tape.backward(f(tape, leaves));
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& v : leaves) analytic.push_back(tape.grad(v));

  double max_rel = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].numel(); ++i) {
      const double orig = params[p][i];
      params[p][i] = orig + h;
      const double fp = eval(params);
      params[p][i] = orig - h;
      const double fm = eval(params);
      params[p][i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[p][i];
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
      max_rel = std::max(max_rel, std::fabs(fd - an) / denom);
    }
  }
  return max_rel;
}

/// Single-parameter convenience form.
inline double grad_check(const std::function<Value(Tape&, Value)>& f,
                         const Tensor& params, double h = 1e-5) {
  return grad_check(
      [&f](Tape& t, const std::vector<Value>& vs) { return f(t, vs[0]); },
      {params}, h);
}

}  // namespace adaodm
