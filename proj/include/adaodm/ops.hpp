#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaodm/tape.hpp"
#include "adaodm/tensor.hpp"

namespace adaodm {

/// Clamp floor used inside every log() in this library.
inline constexpr double kEpsLog = 1e-8;

enum class BnMode { kTrain, kAdapt, kEval };

/// Learnable affine (scale/shift) plus running statistics of one
/// batch-normalization layer. scale and shift are trainable parameters;
/// the running stats are state, mutated only in train mode.
struct BatchNormState {
  Tensor scale;
  Tensor shift;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t width = 0)
      : scale(Tensor::full({width}, 1.0)),
        shift(Tensor::zeros({width})),
        running_mean(Tensor::zeros({width})),
        running_var(Tensor::full({width}, 1.0)) {}

  std::size_t width() const { return scale.numel(); }
};

/// out[i,j] = sum_k x[i,k] * w[k,j] + b[j]
inline Value affine(Tape& t, Value x, Value w, Value b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const Tensor& bv = t.value(b);
  if (xv.cols() != wv.rows() || wv.cols() != bv.numel()) {
    throw std::invalid_argument("affine: shape mismatch x" + xv.shape_string() +
                                " w" + wv.shape_string() + " b" + bv.shape_string());
  }
  const std::size_t batch = xv.rows(), out_dim = wv.cols();
  Tensor out({batch, out_dim});
  detail::matmul(xv, wv, out);
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t j = 0; j < out_dim; ++j) out(i, j) += bv[j];

  Value o = t.push(std::move(out));
  t.set_backprop(o, [o, x, w, b](Tape& tp) {
    const Tensor& g = tp.grad(o);
    detail::matmul_bt(g, tp.value(w), tp.grad_mut(x));
    detail::matmul_at(tp.value(x), g, tp.grad_mut(w));
    Tensor& gb = tp.grad_mut(b);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
  });
  return o;
}

/// Elementwise max(0, x). Subgradient at 0 is 0. NaN propagates (std::max
/// would silently swallow it).
inline Value relu(Tape& t, Value x) {
  Tensor out = t.value(x);
  for (auto& v : out.data()) v = v > 0.0 ? v : v * 0.0;
  Value o = t.push(std::move(out));
  t.set_backprop(o, [o, x](Tape& tp) {
    const Tensor& g = tp.grad(o);
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad_mut(x);
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
  return o;
}

/// Batch normalization over a B x F batch.
///
/// train/adapt modes normalize by current-batch mean and (biased) variance;
/// eval mode normalizes by the running statistics. Only train mode updates
/// the running stats (EMA with state.momentum; running_var gets the unbiased
/// batch variance). adapt mode with B == 1 falls back to running statistics
/// so single-sample streams do not divide by a zero batch variance.
inline Value batchnorm(Tape& t, Value x, Value scale, Value shift,
                       BatchNormState& state, BnMode mode) {
  const Tensor& xv = t.value(x);
  const std::size_t batch = xv.rows(), width = xv.cols();
  if (width != state.width()) {
    throw std::invalid_argument("batchnorm: input width " + xv.shape_string() +
                                " does not match state width [" +
                                std::to_string(state.width()) + "]");
  }
  const Tensor& sv = t.value(scale);
  const Tensor& bv = t.value(shift);

  const bool batch_stats =
      mode == BnMode::kTrain || (mode == BnMode::kAdapt && batch > 1);

  std::vector<double> mean(width), inv_std(width);
  if (batch_stats) {
    std::vector<double> var(width, 0.0);
    for (std::size_t f = 0; f < width; ++f) {
      double m = 0.0;
      for (std::size_t i = 0; i < batch; ++i) m += xv(i, f);
      m /= static_cast<double>(batch);
      double v = 0.0;
      for (std::size_t i = 0; i < batch; ++i) {
        const double d = xv(i, f) - m;
        v += d * d;
      }
      v /= static_cast<double>(batch);
      mean[f] = m;
      var[f] = v;
      inv_std[f] = 1.0 / std::sqrt(v + state.eps);
    }
    if (mode == BnMode::kTrain) {
      const double m = state.momentum;
      const double unbias =
          batch > 1 ? static_cast<double>(batch) / static_cast<double>(batch - 1) : 1.0;
      for (std::size_t f = 0; f < width; ++f) {
        state.running_mean[f] = (1.0 - m) * state.running_mean[f] + m * mean[f];
        state.running_var[f] = (1.0 - m) * state.running_var[f] + m * var[f] * unbias;
      }
    }
  } else {
    for (std::size_t f = 0; f < width; ++f) {
      mean[f] = state.running_mean[f];
      inv_std[f] = 1.0 / std::sqrt(state.running_var[f] + state.eps);
    }
  }

  Tensor xhat({batch, width});
  Tensor out({batch, width});
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t f = 0; f < width; ++f) {
      xhat(i, f) = (xv(i, f) - mean[f]) * inv_std[f];
      out(i, f) = sv[f] * xhat(i, f) + bv[f];
    }
  }

  Value o = t.push(std::move(out));
  t.set_backprop(o, [o, x, scale, shift, xhat, inv_std, batch_stats](Tape& tp) {
    const Tensor& g = tp.grad(o);
    const std::size_t batch = g.rows(), width = g.cols();
    const Tensor& sv = tp.value(scale);
    Tensor& gx = tp.grad_mut(x);
    Tensor& gs = tp.grad_mut(scale);
    Tensor& gb = tp.grad_mut(shift);
    for (std::size_t f = 0; f < width; ++f) {
      double sum_g = 0.0, sum_g_xhat = 0.0;
      for (std::size_t i = 0; i < batch; ++i) {
        sum_g += g(i, f);
        sum_g_xhat += g(i, f) * xhat(i, f);
      }
      gs[f] += sum_g_xhat;
      gb[f] += sum_g;
      if (batch_stats) {
        const double k = sv[f] * inv_std[f] / static_cast<double>(batch);
        for (std::size_t i = 0; i < batch; ++i) {
          gx(i, f) += k * (static_cast<double>(batch) * g(i, f) - sum_g -
                           xhat(i, f) * sum_g_xhat);
        }
      } else {
        const double k = sv[f] * inv_std[f];
        for (std::size_t i = 0; i < batch; ++i) gx(i, f) += k * g(i, f);
      }
    }
  });
  return o;
}

/// Row-wise softmax with max subtraction.
inline Value softmax(Tape& t, Value z) {
  const Tensor& zv = t.value(z);
  if (zv.cols() < 2) {
    throw std::invalid_argument("softmax: needs >= 2 classes, got " + zv.shape_string());
  }
  const std::size_t batch = zv.rows(), classes = zv.cols();
  Tensor out({batch, classes});
  for (std::size_t i = 0; i < batch; ++i) {
    double mx = zv(i, 0);
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, zv(i, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      out(i, c) = std::exp(zv(i, c) - mx);
      sum += out(i, c);
    }
    for (std::size_t c = 0; c < classes; ++c) out(i, c) /= sum;
  }
  Value o = t.push(std::move(out));
  t.set_backprop(o, [o, z](Tape& tp) {
    const Tensor& g = tp.grad(o);
    const Tensor& p = tp.value(o);
    Tensor& gz = tp.grad_mut(z);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) dot += g(i, c) * p(i, c);
      for (std::size_t c = 0; c < g.cols(); ++c)
        gz(i, c) += p(i, c) * (g(i, c) - dot);
    }
  });
  return o;
}

/// Mean over the batch of -log(probs[i, labels[i]]), probability clamped
/// to >= kEpsLog.
inline Value cross_entropy(Tape& t, Value probs, const std::vector<int>& labels) {
  const Tensor& pv = t.value(probs);
  const std::size_t batch = pv.rows(), classes = pv.cols();
  if (labels.size() != batch) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(batch));
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) +
                              " out of range [0," + std::to_string(classes) + ")");
    }
    loss -= std::log(std::max(pv(i, static_cast<std::size_t>(y)), kEpsLog));
  }
  loss /= static_cast<double>(batch);

  Value o = t.push(Tensor::scalar(loss));
  t.set_backprop(o, [o, probs, labels](Tape& tp) {
    const double g = tp.grad(o)[0];
    const Tensor& pv = tp.value(probs);
    Tensor& gp = tp.grad_mut(probs);
    const double inv_b = 1.0 / static_cast<double>(pv.rows());
    for (std::size_t i = 0; i < pv.rows(); ++i) {
      const std::size_t y = static_cast<std::size_t>(labels[i]);
      if (pv(i, y) > kEpsLog) gp(i, y) -= g * inv_b / pv(i, y);
    }
  });
  return o;
}

/// Identity in the forward pass; multiplies the upstream gradient by -eta in
/// the backward pass.
inline Value grad_reverse(Tape& t, Value x, double eta) {
  if (eta < 0.0) throw std::invalid_argument("grad_reverse: eta must be >= 0");
  Value o = t.push(t.value(x));
  t.set_backprop(o, [o, x, eta](Tape& tp) {
    const Tensor& g = tp.grad(o);
    Tensor& gx = tp.grad_mut(x);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += -eta * g[i];
  });
  return o;
}

inline Value add(Tape& t, Value a, Value b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  check_same_shape(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  Value o = t.push(std::move(out));
  t.set_backprop(o, [o, a, b](Tape& tp) {
    const Tensor& g = tp.grad(o);
    Tensor& ga = tp.grad_mut(a);
    Tensor& gb = tp.grad_mut(b);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
  return o;
}

inline Value scale_by(Tape& t, Value a, double c) {
  Tensor out = t.value(a);
  for (auto& v : out.data()) v *= c;
  Value o = t.push(std::move(out));
  t.set_backprop(o, [o, a, c](Tape& tp) {
    const Tensor& g = tp.grad(o);
    Tensor& ga = tp.grad_mut(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
  });
  return o;
}

}  // namespace adaodm
