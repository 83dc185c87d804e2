#include "xferlab/training/optimizer.hpp"

#include <cmath>

#include "xferlab/errors.hpp"

namespace xferlab::training {

template <typename Scalar>
void adamw_step(bytelm::Parameters<Scalar>& params, const bytelm::Gradients<Scalar>& grads,
                OptimizerState<Scalar>& state, double lr) {
  if (!(lr >= 0.0)) throw PreconditionError("learning rate must be >= 0");
  if (!(params.config == grads.config) || !(params.config == state.m.config))
    throw PreconditionError("parameter, gradient and optimizer shapes differ");
  bytelm::for_each_tensor(
      [](const std::string& name, const auto& g) {
        if (!g.allFinite()) throw NumericError("non-finite gradient in " + name);
      },
      grads);

  const auto& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const auto b1 = static_cast<Scalar>(o.beta1), b2 = static_cast<Scalar>(o.beta2);
  const auto c1 = static_cast<Scalar>(1.0 / (1.0 - std::pow(o.beta1, t)));
  const auto c2 = static_cast<Scalar>(1.0 / (1.0 - std::pow(o.beta2, t)));
  const auto eps = static_cast<Scalar>(o.epsilon);
  const auto step_lr = static_cast<Scalar>(lr);
  const auto decay = static_cast<Scalar>(lr * o.weight_decay);

  bytelm::for_each_tensor(
      [&](const std::string&, auto& theta, const auto& g, auto& m, auto& v) {
        m.array() = b1 * m.array() + (Scalar(1) - b1) * g.array();
        v.array() = b2 * v.array() + (Scalar(1) - b2) * g.array().square();
        auto th = theta.array();
        auto mh = m.array() * c1;
        auto denom = (v.array() * c2).sqrt() + eps;
        // 0/0 (zero moments with eps = 0) means no update.
        auto adam = (denom > Scalar(0)).select(mh / denom, Scalar(0));
        th = th - step_lr * adam - decay * th;
      },
      params, grads, state.m, state.v);
}

template <typename Scalar>
double clip_global_norm(bytelm::Gradients<Scalar>& grads, double max_norm) {
  double sq = 0.0;
  bytelm::for_each_tensor(
      [&](const std::string&, const auto& g) { sq += g.template cast<double>().squaredNorm(); }, grads);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto scale = static_cast<Scalar>(max_norm / norm);
    bytelm::for_each_tensor([&](const std::string&, auto& g) { g *= scale; }, grads);
  }
  return norm;
}

template void adamw_step(bytelm::Parameters<float>&, const bytelm::Gradients<float>&, OptimizerState<float>&, double);
template void adamw_step(bytelm::Parameters<double>&, const bytelm::Gradients<double>&, OptimizerState<double>&, double);
template double clip_global_norm(bytelm::Gradients<float>&, double);
template double clip_global_norm(bytelm::Gradients<double>&, double);

}  // namespace xferlab::training
