#include "xferlab/bytelm/parameters.hpp"

#include <cmath>

#include "xferlab/rng.hpp"

namespace xferlab::bytelm {

template <typename Scalar>
Parameters<Scalar> zeros_like(const ModelConfig& c) {
  require_valid(c);
  Parameters<Scalar> p;
  p.config = c;
  p.embedding = Matrix<Scalar>::Zero(c.vocab_size, c.d_model);
  p.layers.resize(static_cast<std::size_t>(c.n_layers));
  for (auto& layer : p.layers) {
    layer.attn_norm = Vector<Scalar>::Zero(c.d_model);
    layer.wq = Matrix<Scalar>::Zero(c.d_model, c.d_model);
    layer.wk = Matrix<Scalar>::Zero(c.d_model, c.d_model);
    layer.wv = Matrix<Scalar>::Zero(c.d_model, c.d_model);
    layer.wo = Matrix<Scalar>::Zero(c.d_model, c.d_model);
    layer.mlp_norm = Vector<Scalar>::Zero(c.d_model);
    layer.w_gate = Matrix<Scalar>::Zero(c.d_model, c.d_ff);
    layer.w_up = Matrix<Scalar>::Zero(c.d_model, c.d_ff);
    layer.w_down = Matrix<Scalar>::Zero(c.d_ff, c.d_model);
  }
  p.final_norm = Vector<Scalar>::Zero(c.d_model);
  p.rel_bias = Matrix<Scalar>::Zero(c.n_rel_buckets, c.n_heads);
  return p;
}

template <typename Scalar>
Parameters<Scalar> init_params(const ModelConfig& config, std::uint64_t seed) {
  auto p = zeros_like<Scalar>(config);
  Rng rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  for_each_tensor(
      [&](const std::string& name, auto& t) {
        if (name == "rel_bias") return;
        if (name.ends_with("norm")) {
          t.setOnes();
          return;
        }
        for (Eigen::Index i = 0; i < t.size(); ++i)
          t.data()[i] = static_cast<Scalar>(rng.truncated_normal(stddev));
      },
      p);
  return p;
}

std::size_t parameter_count(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  const std::size_t per_layer = 2 * d + 4 * d * d + 3 * d * ff;
  return static_cast<std::size_t>(c.vocab_size) * d + static_cast<std::size_t>(c.n_layers) * per_layer + d +
         static_cast<std::size_t>(c.n_rel_buckets * c.n_heads);
}

template Parameters<float> zeros_like<float>(const ModelConfig&);
template Parameters<double> zeros_like<double>(const ModelConfig&);
template Parameters<float> init_params<float>(const ModelConfig&, std::uint64_t);
template Parameters<double> init_params<double>(const ModelConfig&, std::uint64_t);

}  // namespace xferlab::bytelm
