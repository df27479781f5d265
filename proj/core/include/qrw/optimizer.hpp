#pragma once

#include <cstdint>

#include "qrw/tensor.hpp"

namespace qrw {

struct AdamConfig {
  double lr_scale = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment accumulators with the parameters' layout.
template <typename T>
struct OptimizerState {
  TensorSet<T> m;
  TensorSet<T> v;
  std::uint64_t t = 0;

  static OptimizerState for_params(const TensorSet<T>& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
};

// One bias-corrected Adam step descending `grads` (gradients of a loss to
// minimize). Throws NumericError when a gradient holds NaN/Inf.
template <typename T>
void adam_step(TensorSet<T>& params, const TensorSet<T>& grads, OptimizerState<T>& state,
               double lr, const AdamConfig& cfg);

// lr_scale * d_model^-1/2 * min(step^-1/2, step * warmup^-3/2)
double noam_lr(std::uint64_t step, std::size_t d_model, std::size_t warmup, double lr_scale);

}  // namespace qrw
