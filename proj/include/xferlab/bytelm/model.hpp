#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "xferlab/bytelm/layers.hpp"
#include "xferlab/bytelm/parameters.hpp"

namespace xferlab::bytelm {

/// Row-major (batch x seq_len) token grid. `targets` are the inputs shifted
/// left by one; `mask` selects the positions that contribute to the loss.
struct TokenBatch {
  int batch = 0;
  int seq_len = 0;
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;

  /// Builds a batch from equal-length (input, target) sequences with an
  /// all-true mask.
  static TokenBatch from_sequences(std::span<const std::vector<int>> inputs,
                                   std::span<const std::vector<int>> targets);

  std::size_t size() const { return inputs.size(); }
};

/// Throws InputError on ids outside [0, 255], shape mismatches, or
/// sequences longer than the model context.
void check_batch(const TokenBatch& batch, const ModelConfig& config);

/// Bucket for a causal distance (query position minus key position).
/// Distances below n_buckets/2 get their own bucket; larger ones are
/// log-spaced up to max_distance, and everything beyond shares the last one.
int relative_position_bucket(int distance, int n_buckets, int max_distance);

/// Test-only switches on the computation graph.
struct ModelHooks {
  Activation mlp_activation = Activation::gelu;
  /// Called per (layer, sequence, head) with the largest |row sum - 1| of the
  /// attention probabilities.
  std::function<void(int layer, int sequence, int head, double row_sum_error)> attention_probe;
};

template <typename Scalar>
struct Logits {
  int batch = 0;
  int seq_len = 0;
  Matrix<Scalar> values;  // (batch * seq_len) x 256, row b * seq_len + t

  auto at(int b, int t) const { return values.row(static_cast<Eigen::Index>(b) * seq_len + t); }
};

template <typename Scalar>
Logits<Scalar> forward(const Parameters<Scalar>& params, const TokenBatch& batch, const ModelHooks& hooks = {});

struct LossValue {
  double mean_loss = 0.0;  // nats per masked token
  double perplexity = 0.0;
  std::size_t tokens = 0;
};

/// Masked token-mean cross entropy and its exponential.
template <typename Scalar>
LossValue loss_and_perplexity(const Logits<Scalar>& logits, std::span<const int> targets,
                              std::span<const std::uint8_t> mask);

template <typename Scalar>
struct LossAndGradient {
  LossValue loss;
  Gradients<Scalar> grads;
};

/// Exact reverse-mode gradient of the masked mean loss. The shared embedding
/// receives both its input-lookup and output-projection contributions.
template <typename Scalar>
LossAndGradient<Scalar> backward(const Parameters<Scalar>& params, const TokenBatch& batch,
                                 const ModelHooks& hooks = {});

/// Forward pass plus loss, for callers that do not need gradients.
template <typename Scalar>
LossValue evaluate_loss(const Parameters<Scalar>& params, const TokenBatch& batch, const ModelHooks& hooks = {});

}  // namespace xferlab::bytelm
