#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "cmp/nn/tensor.hpp"

namespace cmp::nn {

struct OptimizerConfig {
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t total_iterations = 1;  // I

  void validate() const {
    if (!(base_lr > 0.0)) throw InvalidArgument("base_lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be >= 0");
    if (total_iterations <= 0) throw InvalidArgument("total_iterations must be > 0");
  }
};

// floor(2I/3.5) and floor(3I/3.5), in exact integer arithmetic.
inline std::array<std::int64_t, 2> lr_drop_iterations(std::int64_t total_iterations) {
  return {(4 * total_iterations) / 7, (6 * total_iterations) / 7};
}

// Learning rate for a 0-based iteration: base_lr divided by 10 at each drop reached.
inline double scheduled_lr(const OptimizerConfig& cfg, std::int64_t iteration) {
  double lr = cfg.base_lr;
  for (std::int64_t drop : lr_drop_iterations(cfg.total_iterations)) {
    if (iteration >= drop) lr *= 0.1;
  }
  return lr;
}

// Classic momentum with weight decay folded into the gradient:
//   m <- momentum * m + (grad + wd * value);  value <- value - lr * m
template <class T>
void sgd_step(std::span<Parameter<T>* const> params, const OptimizerConfig& cfg, std::int64_t iteration) {
  const double lr = scheduled_lr(cfg, iteration);
  for (Parameter<T>* p : params) {
    auto value = p->value.data();
    auto grad = p->grad.data();
    auto mom = p->momentum.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T g = grad[i] + static_cast<T>(cfg.weight_decay) * value[i];
      mom[i] = static_cast<T>(cfg.momentum) * mom[i] + g;
      value[i] -= static_cast<T>(lr) * mom[i];
    }
  }
}

}  // namespace cmp::nn
