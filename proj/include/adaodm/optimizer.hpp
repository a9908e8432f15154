#pragma once

#include <stdexcept>
#include <vector>

#include "adaodm/model.hpp"
#include "adaodm/tensor.hpp"

namespace adaodm {

/// v <- momentum * v + grad + weight_decay * theta; theta <- theta - lr * v
inline void sgd_step(Tensor& param, Tensor& velocity, const Tensor& grad, double lr,
                     double momentum, double weight_decay) {
  if (param.numel() != grad.numel() || param.numel() != velocity.numel()) {
    throw std::logic_error("sgd_step: parameter/gradient/velocity length mismatch");
  }
  for (std::size_t i = 0; i < param.numel(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

/// SGD with momentum over a fixed set of parameter tensors. Velocity buffers
/// persist across steps; only the parameters handed in at construction are
/// ever touched.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor*> params, double lr, double momentum = 0.0,
               double weight_decay = 0.0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum), wd_(weight_decay) {
    velocity_.reserve(params_.size());
    for (Tensor* p : params_) velocity_.push_back(Tensor::zeros(p->shape()));
  }

  /// Pulls each parameter's gradient from the graph and applies one step.
  void step(const ModelGraph& graph) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      sgd_step(*params_[i], velocity_[i], graph.grad_of(params_[i]), lr_, momentum_, wd_);
    }
  }

  double lr() const { return lr_; }
  std::size_t num_params() const { return params_.size(); }

 private:
  std::vector<Tensor*> params_;
  std::vector<Tensor> velocity_;
  double lr_, momentum_, wd_;
};

}  // namespace adaodm
