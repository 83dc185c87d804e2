#include "xferlab/bytelm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "xferlab/errors.hpp"
#include "xferlab/rng.hpp"

namespace xferlab::bytelm {

GradCheckResult compare_gradients(std::span<const CheckedTensor> tensors, const std::function<double()>& loss,
                                  const GradCheckOptions& options) {
  if (!(options.epsilon > 0.0)) throw PreconditionError("grad_check epsilon must be > 0");
  if (tensors.empty()) throw PreconditionError("grad_check needs at least one tensor");
  for (const auto& t : tensors)
    if (t.values.size() != t.analytic.size() || t.values.empty())
      throw PreconditionError("tensor " + t.name + " has mismatched or empty gradient");

  Rng rng(derive_seed(options.seed, 0x9c));
  GradCheckResult result;
  const double eps = options.epsilon;
  for (std::size_t i = 0; i < options.samples; ++i) {
    const auto& t = tensors[i % tensors.size()];
    const auto idx = static_cast<std::size_t>(rng.below(t.values.size()));
    double& slot = t.values[idx];
    const double saved = slot;
    slot = saved + eps;
    const double up = loss();
    slot = saved - eps;
    const double down = loss();
    slot = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = t.analytic[idx];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > result.max_relative_error || result.worst_tensor.empty()) {
      result.max_relative_error = std::max(rel, result.max_relative_error);
      result.worst_tensor = t.name;
    }
    ++result.coordinates;
  }
  return result;
}

GradCheckResult grad_check(const Parameters<double>& params, const TokenBatch& batch, const GradCheckOptions& options,
                           const ModelHooks& hooks) {
  if (!(options.epsilon > 0.0)) throw PreconditionError("grad_check epsilon must be > 0");
  Parameters<double> probe = params;
  const auto analytic = backward<double>(probe, batch, hooks).grads;

  std::vector<CheckedTensor> tensors;
  for_each_tensor(
      [&](const std::string& name, auto& value, const auto& grad) {
        tensors.push_back({name, std::span<double>(value.data(), static_cast<std::size_t>(value.size())),
                           std::span<const double>(grad.data(), static_cast<std::size_t>(grad.size()))});
      },
      probe, analytic);
  return compare_gradients(tensors, [&] { return evaluate_loss<double>(probe, batch, hooks).mean_loss; }, options);
}

}  // namespace xferlab::bytelm
