#include "qrw/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "qrw/error.hpp"

namespace qrw {

template <typename T>
void adam_step(TensorSet<T>& params, const TensorSet<T>& grads, OptimizerState<T>& state,
               double lr, const AdamConfig& cfg) {
  if (!params.same_layout(grads)) throw Error("adam_step: gradient layout mismatch");
  if (state.m.count() == 0) state = OptimizerState<T>::for_params(params);
  if (!params.same_layout(state.m) || !params.same_layout(state.v)) {
    throw Error("adam_step: optimizer state layout mismatch");
  }
  for (std::size_t i = 0; i < grads.count(); ++i) {
    for (T g : grads[i].data) {
      if (!std::isfinite(g)) throw NumericError(grads.name(i), "non-finite gradient");
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(cfg.epsilon);
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& p = params[i].data;
    const auto& g = grads[i].data;
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      p[j] -= step * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
    }
  }
}

double noam_lr(std::uint64_t step, std::size_t d_model, std::size_t warmup, double lr_scale) {
  if (step < 1) throw Error("noam_lr: step must be >= 1");
  if (warmup < 1) throw Error("noam_lr: warmup must be >= 1");
  const double s = static_cast<double>(step);
  return lr_scale / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(s), s * std::pow(static_cast<double>(warmup), -1.5));
}

template void adam_step<float>(TensorSet<float>&, const TensorSet<float>&, OptimizerState<float>&,
                               double, const AdamConfig&);
template void adam_step<double>(TensorSet<double>&, const TensorSet<double>&,
                                OptimizerState<double>&, double, const AdamConfig&);

}  // namespace qrw
