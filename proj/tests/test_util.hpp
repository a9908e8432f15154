#pragma once

// Test-only tape helpers: tiny reduction nodes used to drive arbitrary
// upstream gradients into the ops under test, independent of the library's
// own loss implementations.

#include <cstddef>

#include "adaodm/rng.hpp"
#include "adaodm/tape.hpp"
#include "adaodm/tensor.hpp"

namespace adaodm::testing {

/// Scalar sum of all entries; backward is all-ones.
inline Value sum_all(Tape& t, Value v) {
  double s = 0.0;
  for (double x : t.value(v).data()) s += x;
  Value o = t.push(Tensor::scalar(s));
  t.set_backprop(o, [o, v](Tape& tp) {
    const double g = tp.grad(o)[0];
    Tensor& gv = tp.grad_mut(v);
    for (std::size_t i = 0; i < gv.numel(); ++i) gv[i] += g;
  });
  return o;
}

/// Scalar sum_i w_i * x_i; backward pushes exactly w as upstream gradient.
inline Value weighted_sum(Tape& t, Value v, Tensor weights) {
  const Tensor& xv = t.value(v);
  double s = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) s += weights[i] * xv[i];
  Value o = t.push(Tensor::scalar(s));
  t.set_backprop(o, [o, v, weights](Tape& tp) {
    const double g = tp.grad(o)[0];
    Tensor& gv = tp.grad_mut(v);
    for (std::size_t i = 0; i < gv.numel(); ++i) gv[i] += g * weights[i];
  });
  return o;
}

/// Scalar sum of squares; backward is 2x.
inline Value square_sum(Tape& t, Value v) {
  double s = 0.0;
  for (double x : t.value(v).data()) s += x * x;
  Value o = t.push(Tensor::scalar(s));
  t.set_backprop(o, [o, v](Tape& tp) {
    const double g = tp.grad(o)[0];
    const Tensor& xv = tp.value(v);
    Tensor& gv = tp.grad_mut(v);
    for (std::size_t i = 0; i < gv.numel(); ++i) gv[i] += 2.0 * g * xv[i];
  });
  return o;
}

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Random rows on the probability simplex (softmax of random logits).
inline Tensor random_probs(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      t(i, c) = std::exp(rng.uniform(-1.5, 1.5));
      sum += t(i, c);
    }
    for (std::size_t c = 0; c < cols; ++c) t(i, c) /= sum;
  }
  return t;
}

}  // namespace adaodm::testing
