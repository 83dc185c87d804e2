#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "xferlab/bytelm/config.hpp"

namespace xferlab::bytelm {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Projections are stored input-major, so a layer applies as `x * W`.
template <typename Scalar>
struct LayerParams {
  Vector<Scalar> attn_norm;  // d_model
  Matrix<Scalar> wq, wk, wv;  // d_model x d_model
  Matrix<Scalar> wo;          // d_model x d_model
  Vector<Scalar> mlp_norm;    // d_model
  Matrix<Scalar> w_gate;      // d_model x d_ff, GELU branch
  Matrix<Scalar> w_up;        // d_model x d_ff, linear branch
  Matrix<Scalar> w_down;      // d_ff x d_model
};

/// All trainable weights. The output projection is `embedding` itself
/// (logits = h * embedding^T); no separate output matrix exists.
template <typename Scalar>
struct Parameters {
  ModelConfig config;
  Matrix<Scalar> embedding;  // 256 x d_model
  std::vector<LayerParams<Scalar>> layers;
  Vector<Scalar> final_norm;  // d_model
  Matrix<Scalar> rel_bias;    // n_rel_buckets x n_heads, shared by all layers
};

/// Gradients have exactly the parameter shapes.
template <typename Scalar>
using Gradients = Parameters<Scalar>;

/// Calls `f(name, tensor, others...)` for every tensor of `first` in a fixed
/// order, passing the same-named tensor of each additional structure.
template <typename F, typename P, typename... Ps>
void for_each_tensor(F&& f, P& first, Ps&... rest) {
  f(std::string("embedding"), first.embedding, rest.embedding...);
  for (std::size_t l = 0; l < first.layers.size(); ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    f(prefix + "attn_norm", first.layers[l].attn_norm, rest.layers[l].attn_norm...);
    f(prefix + "wq", first.layers[l].wq, rest.layers[l].wq...);
    f(prefix + "wk", first.layers[l].wk, rest.layers[l].wk...);
    f(prefix + "wv", first.layers[l].wv, rest.layers[l].wv...);
    f(prefix + "wo", first.layers[l].wo, rest.layers[l].wo...);
    f(prefix + "mlp_norm", first.layers[l].mlp_norm, rest.layers[l].mlp_norm...);
    f(prefix + "w_gate", first.layers[l].w_gate, rest.layers[l].w_gate...);
    f(prefix + "w_up", first.layers[l].w_up, rest.layers[l].w_up...);
    f(prefix + "w_down", first.layers[l].w_down, rest.layers[l].w_down...);
  }
  f(std::string("final_norm"), first.final_norm, rest.final_norm...);
  f(std::string("rel_bias"), first.rel_bias, rest.rel_bias...);
}

/// Correctly shaped, all-zero parameters.
template <typename Scalar>
Parameters<Scalar> zeros_like(const ModelConfig& config);

template <typename Scalar>
Parameters<Scalar> zeros_like(const Parameters<Scalar>& params) {
  return zeros_like<Scalar>(params.config);
}

/// Deterministic in (config, seed). Weight matrices, including the shared
/// embedding, are drawn from a normal with stddev 1/sqrt(d_model) truncated
/// at two stddevs; normalization gains start at 1 and the relative-position
/// bias table at 0.
template <typename Scalar>
Parameters<Scalar> init_params(const ModelConfig& config, std::uint64_t seed);

template <typename To, typename From>
Parameters<To> cast(const Parameters<From>& params) {
  Parameters<To> out = zeros_like<To>(params.config);
  for_each_tensor([](const std::string&, auto& dst, const auto& src) { dst = src.template cast<To>(); },
                  out, params);
  return out;
}

template <typename Scalar>
std::size_t parameter_count(const Parameters<Scalar>& params) {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); }, params);
  return n;
}

/// Parameter count implied by a config, without allocating.
std::size_t parameter_count(const ModelConfig& config);

template <typename Scalar>
bool all_finite(const Parameters<Scalar>& params) {
  bool ok = true;
  for_each_tensor([&](const std::string&, const auto& t) { ok = ok && t.allFinite(); }, params);
  return ok;
}

}  // namespace xferlab::bytelm
