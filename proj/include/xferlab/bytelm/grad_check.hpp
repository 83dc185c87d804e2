#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "xferlab/bytelm/model.hpp"

namespace xferlab::bytelm {

struct GradCheckOptions {
  double epsilon = 1e-5;
  std::size_t samples = 200;  // coordinates compared, spread over all tensors
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_tensor;
};

/// A tensor to perturb in place together with its analytic gradient.
struct CheckedTensor {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

/// Central-difference comparison on sampled coordinates. Tensors are visited
/// round-robin so every tensor gets coordinates. Relative error uses the
/// denominator max(|analytic|, |numeric|, 1e-8).
GradCheckResult compare_gradients(std::span<const CheckedTensor> tensors, const std::function<double()>& loss,
                                  const GradCheckOptions& options);

/// Analytic backward() against finite differences of the full model loss in
/// 64-bit precision.
GradCheckResult grad_check(const Parameters<double>& params, const TokenBatch& batch,
                           const GradCheckOptions& options = {}, const ModelHooks& hooks = {});

}  // namespace xferlab::bytelm
