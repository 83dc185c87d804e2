#include "xferlab/bytelm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "xferlab/bytelm/layers.hpp"
#include "xferlab/errors.hpp"

namespace xferlab::bytelm {

TokenBatch TokenBatch::from_sequences(std::span<const std::vector<int>> inputs,
                                      std::span<const std::vector<int>> targets) {
  if (inputs.size() != targets.size()) throw InputError("input/target sequence count mismatch");
  TokenBatch out;
  out.batch = static_cast<int>(inputs.size());
  out.seq_len = inputs.empty() ? 0 : static_cast<int>(inputs.front().size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].size() != static_cast<std::size_t>(out.seq_len) || targets[i].size() != inputs[i].size())
      throw InputError("sequences in a batch must share one length");
    out.inputs.insert(out.inputs.end(), inputs[i].begin(), inputs[i].end());
    out.targets.insert(out.targets.end(), targets[i].begin(), targets[i].end());
  }
  out.mask.assign(out.inputs.size(), 1);
  return out;
}

void check_batch(const TokenBatch& batch, const ModelConfig& config) {
  if (batch.batch < 1 || batch.seq_len < 1) throw InputError("empty batch");
  const auto n = static_cast<std::size_t>(batch.batch) * static_cast<std::size_t>(batch.seq_len);
  if (batch.inputs.size() != n || batch.targets.size() != n || batch.mask.size() != n)
    throw InputError("batch arrays do not match batch x seq_len = " + std::to_string(n));
  if (batch.seq_len > config.seq_len)
    throw InputError("sequence length " + std::to_string(batch.seq_len) + " exceeds model context " +
                     std::to_string(config.seq_len));
  auto check_ids = [](const std::vector<int>& ids, const char* what) {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] < 0 || ids[i] >= kVocabSize)
        throw InputError(std::string(what) + " id " + std::to_string(ids[i]) + " at flat position " +
                         std::to_string(i) + " is outside [0, 255]");
  };
  check_ids(batch.inputs, "input");
  check_ids(batch.targets, "target");
}

int relative_position_bucket(int distance, int n_buckets, int max_distance) {
  if (distance < 0) throw PreconditionError("relative distance must be >= 0 for causal attention");
  if (n_buckets < 1 || max_distance < 1) throw PreconditionError("bucket parameters must be positive");
  const int max_exact = n_buckets / 2;
  if (distance < max_exact) return distance;
  if (distance >= max_distance) return n_buckets - 1;
  // Same float32 arithmetic as the T5 reference, including its epsilon.
  const float ratio = static_cast<float>(distance) / static_cast<float>(max_exact) +
                      std::numeric_limits<float>::epsilon();
  const float scaled = std::log(ratio) /
                       std::log(static_cast<float>(max_distance) / static_cast<float>(max_exact)) *
                       static_cast<float>(n_buckets - max_exact);
  return std::min(max_exact + static_cast<int>(scaled), n_buckets - 1);
}

namespace {

template <typename S>
struct LayerCache {
  RmsState<S> norm1;
  Matrix<S> h1, q, k, v;
  std::vector<Matrix<S>> probs;  // one T x T matrix per (sequence, head)
  Matrix<S> attn;
  RmsState<S> norm2;
  Matrix<S> h2;
  MlpState<S> mlp;
};

template <typename S>
struct ForwardCache {
  std::vector<LayerCache<S>> layers;
  RmsState<S> final_norm;
  Matrix<S> h_final;
  std::vector<int> bucket_of_distance;
};

void require_finite(bool ok, const std::string& where) {
  if (!ok) throw NumericError("non-finite values in " + where);
}

template <typename S>
Matrix<S> run_forward(const Parameters<S>& p, const TokenBatch& batch, const ModelHooks& hooks,
                      ForwardCache<S>* cache) {
  check_batch(batch, p.config);
  const auto& cfg = p.config;
  const int T = batch.seq_len;
  const int B = batch.batch;
  const int H = cfg.n_heads;
  const int dh = cfg.d_head;
  const Eigen::Index N = static_cast<Eigen::Index>(B) * T;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  std::vector<int> bucket(static_cast<std::size_t>(T));
  for (int d = 0; d < T; ++d) bucket[static_cast<std::size_t>(d)] =
      relative_position_bucket(d, cfg.n_rel_buckets, cfg.rel_max_distance);

  Matrix<S> x(N, cfg.d_model);
  for (Eigen::Index n = 0; n < N; ++n) x.row(n) = p.embedding.row(batch.inputs[static_cast<std::size_t>(n)]);

  if (cache) {
    cache->layers.assign(p.layers.size(), {});
    cache->bucket_of_distance = bucket;
  }

  Matrix<S> scores(T, T);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& w = p.layers[l];
    LayerCache<S> local;
    LayerCache<S>& c = cache ? cache->layers[l] : local;

    Matrix<S> h1 = rms_forward(x, w.attn_norm, c.norm1);
    Matrix<S> q = h1 * w.wq;
    Matrix<S> k = h1 * w.wk;
    Matrix<S> v = h1 * w.wv;
    Matrix<S> attn(N, cfg.d_model);
    if (cache) c.probs.assign(static_cast<std::size_t>(B * H), Matrix<S>());

    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        auto qb = q.block(static_cast<Eigen::Index>(b) * T, h * dh, T, dh);
        auto kb = k.block(static_cast<Eigen::Index>(b) * T, h * dh, T, dh);
        auto vb = v.block(static_cast<Eigen::Index>(b) * T, h * dh, T, dh);
        scores.noalias() = qb * kb.transpose();
        for (int i = 0; i < T; ++i) {
          S row_max = -std::numeric_limits<S>::infinity();
          for (int j = 0; j <= i; ++j) {
            S s = scores(i, j) * scale + p.rel_bias(bucket[static_cast<std::size_t>(i - j)], h);
            scores(i, j) = s;
            row_max = std::max(row_max, s);
          }
          S total = 0;
          for (int j = 0; j <= i; ++j) {
            S e = std::exp(scores(i, j) - row_max);
            scores(i, j) = e;
            total += e;
          }
          const S inv = static_cast<S>(1) / total;
          for (int j = 0; j <= i; ++j) scores(i, j) *= inv;
          for (int j = i + 1; j < T; ++j) scores(i, j) = 0;
        }
        attn.block(static_cast<Eigen::Index>(b) * T, h * dh, T, dh).noalias() = scores * vb;
        if (hooks.attention_probe) {
          const double err = (scores.rowwise().sum().array().template cast<double>() - 1.0).abs().maxCoeff();
          hooks.attention_probe(static_cast<int>(l), b, h, err);
        }
        if (cache) c.probs[static_cast<std::size_t>(b * H + h)] = scores;
      }
    }

    Matrix<S> x_mid = x;
    x_mid.noalias() += attn * w.wo;
    require_finite(x_mid.allFinite(), "layer " + std::to_string(l) + " attention");

    Matrix<S> h2 = rms_forward(x_mid, w.mlp_norm, c.norm2);
    Matrix<S> x_out = x_mid;
    x_out.noalias() += mlp_forward(h2, w.w_gate, w.w_up, w.w_down, hooks.mlp_activation, c.mlp);
    require_finite(x_out.allFinite(), "layer " + std::to_string(l) + " mlp");

    if (cache) {
      c.h1 = std::move(h1);
      c.q = std::move(q);
      c.k = std::move(k);
      c.v = std::move(v);
      c.attn = std::move(attn);
      c.h2 = std::move(h2);
    }
    x = std::move(x_out);
  }

  RmsState<S> final_local;
  RmsState<S>& fn = cache ? cache->final_norm : final_local;
  Matrix<S> h_final = rms_forward(x, p.final_norm, fn);
  Matrix<S> logits = h_final * p.embedding.transpose();
  require_finite(logits.allFinite(), "output logits");
  if (cache) {
    cache->h_final = std::move(h_final);
  }
  return logits;
}

/// Masked mean cross entropy; optionally writes dL/dlogits.
template <typename S>
LossValue softmax_cross_entropy(const Matrix<S>& logits, std::span<const int> targets,
                                std::span<const std::uint8_t> mask, Matrix<S>* dlogits) {
  if (targets.size() != static_cast<std::size_t>(logits.rows()) || mask.size() != targets.size())
    throw InputError("logits, targets and mask disagree in length");
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw PreconditionError("loss mask selects no positions");
  for (std::size_t n = 0; n < targets.size(); ++n)
    if (mask[n] && (targets[n] < 0 || targets[n] >= logits.cols()))
      throw InputError("target id " + std::to_string(targets[n]) + " out of range");

  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  const double inv_count = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (Eigen::Index n = 0; n < logits.rows(); ++n) {
    if (!mask[static_cast<std::size_t>(n)]) continue;
    auto row = logits.row(n);
    const double row_max = static_cast<double>(row.maxCoeff());
    double sum = 0.0;
    for (Eigen::Index v = 0; v < row.size(); ++v) sum += std::exp(static_cast<double>(row(v)) - row_max);
    const double lse = row_max + std::log(sum);
    const int target = targets[static_cast<std::size_t>(n)];
    total += lse - static_cast<double>(row(target));
    if (dlogits) {
      for (Eigen::Index v = 0; v < row.size(); ++v)
        (*dlogits)(n, v) = static_cast<S>(std::exp(static_cast<double>(row(v)) - lse) * inv_count);
      (*dlogits)(n, target) -= static_cast<S>(inv_count);
    }
  }
  LossValue out;
  out.tokens = count;
  out.mean_loss = total * inv_count;
  out.perplexity = std::exp(out.mean_loss);
  return out;
}

}  // namespace

template <typename Scalar>
Logits<Scalar> forward(const Parameters<Scalar>& params, const TokenBatch& batch, const ModelHooks& hooks) {
  Logits<Scalar> out;
  out.batch = batch.batch;
  out.seq_len = batch.seq_len;
  out.values = run_forward<Scalar>(params, batch, hooks, nullptr);
  return out;
}

template <typename Scalar>
LossValue loss_and_perplexity(const Logits<Scalar>& logits, std::span<const int> targets,
                              std::span<const std::uint8_t> mask) {
  return softmax_cross_entropy<Scalar>(logits.values, targets, mask, nullptr);
}

template <typename Scalar>
LossValue evaluate_loss(const Parameters<Scalar>& params, const TokenBatch& batch, const ModelHooks& hooks) {
  Matrix<Scalar> logits = run_forward<Scalar>(params, batch, hooks, nullptr);
  return softmax_cross_entropy<Scalar>(logits, batch.targets, batch.mask, nullptr);
}

template <typename Scalar>
LossAndGradient<Scalar> backward(const Parameters<Scalar>& p, const TokenBatch& batch, const ModelHooks& hooks) {
  using S = Scalar;
  ForwardCache<S> cache;
  Matrix<S> logits = run_forward<S>(p, batch, hooks, &cache);
  Matrix<S> dlogits;
  LossAndGradient<S> result;
  result.loss = softmax_cross_entropy<S>(logits, batch.targets, batch.mask, &dlogits);
  logits.resize(0, 0);

  auto& g = result.grads;
  g = zeros_like<S>(p.config);
  const auto& cfg = p.config;
  const int T = batch.seq_len;
  const int B = batch.batch;
  const int H = cfg.n_heads;
  const int dh = cfg.d_head;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  const auto& bucket = cache.bucket_of_distance;

  // Output projection through the shared embedding.
  g.embedding.noalias() += dlogits.transpose() * cache.h_final;
  Matrix<S> dh_final = dlogits * p.embedding;
  Matrix<S> dx = rms_backward(dh_final, p.final_norm, cache.final_norm, g.final_norm);
  require_finite(dx.allFinite(), "final norm gradient");

  Matrix<S> dP(T, T), dS(T, T);
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& w = p.layers[li];
    auto& gw = g.layers[li];
    const auto& c = cache.layers[li];
    const std::string where = "layer " + std::to_string(li);

    // MLP: x_out = x_mid + (act(h2 Wg) * (h2 Wu)) Wd
    Matrix<S> dh2 = mlp_backward(dx, c.h2, w.w_gate, w.w_up, w.w_down, hooks.mlp_activation, c.mlp, gw.w_gate,
                                 gw.w_up, gw.w_down);
    Matrix<S> dx_mid = dx + rms_backward(dh2, w.mlp_norm, c.norm2, gw.mlp_norm);
    require_finite(dx_mid.allFinite(), where + " mlp gradient");

    // Attention: x_mid = x_in + attn Wo
    gw.wo.noalias() += c.attn.transpose() * dx_mid;
    Matrix<S> dattn = dx_mid * w.wo.transpose();
    Matrix<S> dq = Matrix<S>::Zero(c.q.rows(), c.q.cols());
    Matrix<S> dk = Matrix<S>::Zero(c.k.rows(), c.k.cols());
    Matrix<S> dv = Matrix<S>::Zero(c.v.rows(), c.v.cols());
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const Eigen::Index r0 = static_cast<Eigen::Index>(b) * T;
        const auto& P = c.probs[static_cast<std::size_t>(b * H + h)];
        auto d_out = dattn.block(r0, h * dh, T, dh);
        dP.noalias() = d_out * c.v.block(r0, h * dh, T, dh).transpose();
        dv.block(r0, h * dh, T, dh).noalias() += P.transpose() * d_out;
        for (int i = 0; i < T; ++i) {
          S dot = 0;
          for (int j = 0; j <= i; ++j) dot += P(i, j) * dP(i, j);
          for (int j = 0; j <= i; ++j) {
            const S ds = P(i, j) * (dP(i, j) - dot);
            dS(i, j) = ds;
            g.rel_bias(bucket[static_cast<std::size_t>(i - j)], h) += ds;
          }
          for (int j = i + 1; j < T; ++j) dS(i, j) = 0;
        }
        dq.block(r0, h * dh, T, dh).noalias() += scale * (dS * c.k.block(r0, h * dh, T, dh));
        dk.block(r0, h * dh, T, dh).noalias() += scale * (dS.transpose() * c.q.block(r0, h * dh, T, dh));
      }
    }
    gw.wq.noalias() += c.h1.transpose() * dq;
    gw.wk.noalias() += c.h1.transpose() * dk;
    gw.wv.noalias() += c.h1.transpose() * dv;
    Matrix<S> dh1 = dq * w.wq.transpose();
    dh1.noalias() += dk * w.wk.transpose();
    dh1.noalias() += dv * w.wv.transpose();
    dx = dx_mid + rms_backward(dh1, w.attn_norm, c.norm1, gw.attn_norm);
    require_finite(dx.allFinite(), where + " attention gradient");
  }

  // Input lookup through the shared embedding.
  for (Eigen::Index n = 0; n < dx.rows(); ++n) g.embedding.row(batch.inputs[static_cast<std::size_t>(n)]) += dx.row(n);
  return result;
}

template Logits<float> forward<float>(const Parameters<float>&, const TokenBatch&, const ModelHooks&);
template Logits<double> forward<double>(const Parameters<double>&, const TokenBatch&, const ModelHooks&);
template LossValue loss_and_perplexity<float>(const Logits<float>&, std::span<const int>,
                                              std::span<const std::uint8_t>);
template LossValue loss_and_perplexity<double>(const Logits<double>&, std::span<const int>,
                                               std::span<const std::uint8_t>);
template LossValue evaluate_loss<float>(const Parameters<float>&, const TokenBatch&, const ModelHooks&);
template LossValue evaluate_loss<double>(const Parameters<double>&, const TokenBatch&, const ModelHooks&);
template LossAndGradient<float> backward<float>(const Parameters<float>&, const TokenBatch&, const ModelHooks&);
template LossAndGradient<double> backward<double>(const Parameters<double>&, const TokenBatch&, const ModelHooks&);

}  // namespace xferlab::bytelm
