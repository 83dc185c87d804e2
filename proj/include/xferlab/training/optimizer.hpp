#pragma once

#include <cstdint>

#include "xferlab/bytelm/parameters.hpp"

namespace xferlab::training {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

template <typename Scalar>
struct OptimizerState {
  std::int64_t step = 0;
  bytelm::Parameters<Scalar> m;
  bytelm::Parameters<Scalar> v;
  AdamWOptions options;

  static OptimizerState zeros(const bytelm::ModelConfig& config, const AdamWOptions& options = {}) {
    return {0, bytelm::zeros_like<Scalar>(config), bytelm::zeros_like<Scalar>(config), options};
  }
};

/// One bias-corrected Adam update with decoupled weight decay:
///   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
/// Throws NumericError naming the first tensor with a non-finite gradient,
/// before anything is modified.
template <typename Scalar>
void adamw_step(bytelm::Parameters<Scalar>& params, const bytelm::Gradients<Scalar>& grads,
                OptimizerState<Scalar>& state, double lr);

/// Scales grads in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename Scalar>
double clip_global_norm(bytelm::Gradients<Scalar>& grads, double max_norm);

}  // namespace xferlab::training
