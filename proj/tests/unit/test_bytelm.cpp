#include <doctest.h>

#include <cmath>
#include <numeric>

#include "xferlab/bytelm/checkpoint.hpp"
#include "xferlab/bytelm/grad_check.hpp"
#include "xferlab/bytelm/model.hpp"
#include "xferlab/errors.hpp"
#include "xferlab/rng.hpp"

using namespace xferlab;
using namespace xferlab::bytelm;

namespace {

ModelConfig tiny(int seq_len = 16) {
  return ModelConfig{.d_model = 16, .n_layers = 2, .n_heads = 2, .d_head = 8, .d_ff = 24, .seq_len = seq_len};
}

TokenBatch random_batch(int batch, int seq_len, std::uint64_t seed) {
  Rng rng(seed);
  TokenBatch out;
  out.batch = batch;
  out.seq_len = seq_len;
  for (int i = 0; i < batch * seq_len; ++i) {
    out.inputs.push_back(static_cast<int>(rng.below(256)));
    out.targets.push_back(static_cast<int>(rng.below(256)));
  }
  out.mask.assign(out.inputs.size(), 1);
  return out;
}

/// Random non-zero values in every tensor, including gains and the bias table.
template <typename S>
Parameters<S> perturbed_params(const ModelConfig& config, std::uint64_t seed) {
  auto p = init_params<S>(config, seed);
  Rng rng(derive_seed(seed, 1));
  for_each_tensor(
      [&](const std::string& name, auto& t) {
        if (name.ends_with("norm"))
          for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(1.0 + 0.3 * rng.normal());
        if (name == "rel_bias")
          for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(0.5 * rng.normal());
      },
      p);
  return p;
}

}  // namespace

TEST_CASE("config validation reports each bad field") {
  ModelConfig c = tiny();
  c.vocab_size = 300;
  c.d_model = 17;
  c.seq_len = 1;
  const auto problems = validate(c);
  CHECK(problems.size() == 3);
  CHECK_THROWS_AS(init_params<float>(c, 1), ValidationError);
  CHECK(validate(tiny()).empty());
}

TEST_CASE("init is deterministic and shaped by the config") {
  const auto c = ModelConfig{.d_model = 64, .n_layers = 2, .n_heads = 4, .d_head = 16, .d_ff = 128, .seq_len = 32};
  const auto a = init_params<float>(c, 7);
  const auto b = init_params<float>(c, 7);
  for_each_tensor([](const std::string& name, const auto& x, const auto& y) {
    INFO(name);
    CHECK(std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.size()) * sizeof(float)) == 0);
  }, a, b);
  CHECK(a.embedding.rows() == 256);
  CHECK(a.embedding.cols() == 64);
  CHECK(a.rel_bias.isZero());
  CHECK(a.layers[1].mlp_norm.isOnes());
  CHECK(parameter_count(a) == parameter_count(c));
  // Truncated at two standard deviations.
  CHECK(a.layers[0].wq.cwiseAbs().maxCoeff() <= 2.0f / 8.0f + 1e-6f);
}

TEST_CASE("paper preset has about 65M parameters") {
  const auto c = paper_preset();
  const auto p = init_params<float>(c, 3);
  const double n = static_cast<double>(parameter_count(p));
  CHECK(n == static_cast<double>(parameter_count(c)));
  CHECK(std::abs(n - 65e6) / 65e6 <= 0.05);
}

TEST_CASE("relative position buckets") {
  CHECK(relative_position_bucket(0, 32, 128) == 0);
  CHECK(relative_position_bucket(5, 32, 128) == 5);
  CHECK(relative_position_bucket(15, 32, 128) == 15);
  CHECK(relative_position_bucket(16, 32, 128) == 16);
  CHECK(relative_position_bucket(500, 32, 128) == 31);
  CHECK(relative_position_bucket(128, 32, 128) == 31);
  CHECK_THROWS_AS(relative_position_bucket(-1, 32, 128), PreconditionError);

  for (auto [buckets, max_distance] : {std::pair{32, 128}, std::pair{8, 20}, std::pair{16, 64}}) {
    std::vector<int> seen(static_cast<std::size_t>(buckets), 0);
    int prev = 0;
    for (int d = 0; d <= max_distance; ++d) {
      const int b = relative_position_bucket(d, buckets, max_distance);
      CHECK(b >= prev);
      CHECK(b < buckets);
      seen[static_cast<std::size_t>(b)] = 1;
      prev = b;
    }
    CHECK(std::accumulate(seen.begin(), seen.end(), 0) == buckets);
  }
}

TEST_CASE("forward shape and input errors") {
  const auto p = init_params<float>(tiny(), 1);
  const auto batch = random_batch(2, 16, 3);
  const auto logits = forward(p, batch);
  CHECK(logits.batch == 2);
  CHECK(logits.seq_len == 16);
  CHECK(logits.values.rows() == 32);
  CHECK(logits.values.cols() == 256);
  CHECK(logits.values.allFinite());

  auto bad = batch;
  bad.inputs[4] = 256;
  CHECK_THROWS_AS(forward(p, bad), InputError);
  CHECK_THROWS_AS(forward(p, random_batch(1, 17, 3)), InputError);
}

TEST_CASE("zero embedding gives uniform predictions") {
  auto p = perturbed_params<double>(tiny(), 5);
  p.embedding.setZero();
  const auto batch = random_batch(3, 16, 11);
  const auto logits = forward(p, batch);
  for (Eigen::Index r = 0; r < logits.values.rows(); ++r)
    CHECK(logits.values.row(r).maxCoeff() - logits.values.row(r).minCoeff() <= 1e-6);
  const auto loss = loss_and_perplexity(logits, batch.targets, batch.mask);
  CHECK(loss.perplexity == doctest::Approx(256.0).epsilon(1e-6));
}

TEST_CASE("causal mask: future tokens never affect earlier logits") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    ModelConfig c = tiny(24);
    c.n_layers = 1 + static_cast<int>(rng.below(3));
    const auto p = perturbed_params<double>(c, seed);
    const auto pf = cast<float>(p);
    auto batch = random_batch(2, 24, seed + 100);
    const int t = 9;
    auto changed = batch;
    for (int b = 0; b < 2; ++b)
      for (int pos = t; pos < 24; ++pos) changed.inputs[static_cast<std::size_t>(b * 24 + pos)] = static_cast<int>(rng.below(256));

    const auto before = forward(p, batch);
    const auto after = forward(p, changed);
    const auto before_f = forward(pf, batch);
    const auto after_f = forward(pf, changed);
    for (int b = 0; b < 2; ++b) {
      for (int pos = 0; pos < t; ++pos) {
        CHECK((before.at(b, pos) - after.at(b, pos)).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((before_f.at(b, pos).array() == after_f.at(b, pos).array()).all());
      }
    }
  }
}

TEST_CASE("softmax rows sum to one") {
  const auto p = perturbed_params<float>(tiny(), 9);
  const auto batch = random_batch(2, 16, 4);
  double worst = 0.0;
  int calls = 0;
  ModelHooks hooks;
  hooks.attention_probe = [&](int, int, int, double err) {
    worst = std::max(worst, err);
    ++calls;
  };
  const auto logits = forward(p, batch, hooks);
  CHECK(calls == 2 * 2 * 2);
  CHECK(worst <= 1e-6);
  for (Eigen::Index r = 0; r < logits.values.rows(); ++r) {
    const Eigen::ArrayXd row = logits.values.row(r).cast<double>().transpose().array();
    const double total = (row - row.maxCoeff()).exp().sum();
    const Eigen::ArrayXd prob = (row - row.maxCoeff()).exp() / total;
    CHECK(std::abs(prob.sum() - 1.0) <= 1e-6);
  }
}

TEST_CASE("output projection is the embedding matrix") {
  auto p = perturbed_params<double>(tiny(), 2);
  const auto batch = random_batch(1, 16, 8);
  p.embedding.row(42).setZero();
  const auto logits = forward(p, batch);
  CHECK(logits.values.col(42).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loss and perplexity") {
  Logits<double> uniform{1, 4, Matrix<double>::Zero(4, 256)};
  std::vector<int> targets{1, 2, 3, 4};
  std::vector<std::uint8_t> mask{1, 1, 1, 1};
  auto l = loss_and_perplexity(uniform, targets, mask);
  CHECK(l.mean_loss == doctest::Approx(std::log(256.0)).epsilon(1e-12));
  CHECK(std::abs(l.perplexity - 256.0) <= 1e-4);

  Logits<double> sharp{1, 4, Matrix<double>::Zero(4, 256)};
  for (int r = 0; r < 4; ++r) sharp.values(r, targets[static_cast<std::size_t>(r)]) = 30.0;
  CHECK(loss_and_perplexity(sharp, targets, mask).perplexity <= 1.001);

  // Target probabilities 1/2 and 1/4 over 256 classes.
  Logits<double> hand{1, 2, Matrix<double>::Zero(2, 256)};
  hand.values(0, 7) = std::log(255.0);
  hand.values(1, 9) = std::log(85.0);
  std::vector<int> hand_targets{7, 9};
  std::vector<std::uint8_t> hand_mask{1, 1};
  l = loss_and_perplexity(hand, hand_targets, hand_mask);
  CHECK(l.mean_loss == doctest::Approx(1.0397207708399179).epsilon(1e-12));
  CHECK(l.perplexity == doctest::Approx(2.8284271247461903).epsilon(1e-12));

  std::vector<std::uint8_t> none{0, 0};
  CHECK_THROWS_AS(loss_and_perplexity(hand, hand_targets, none), PreconditionError);
}

TEST_CASE("duplicated sequence gives the single-sequence mean gradient") {
  const auto p = perturbed_params<double>(tiny(), 4);
  const auto single = random_batch(1, 16, 21);
  TokenBatch twice = single;
  twice.batch = 2;
  twice.inputs.insert(twice.inputs.end(), single.inputs.begin(), single.inputs.end());
  twice.targets.insert(twice.targets.end(), single.targets.begin(), single.targets.end());
  twice.mask.insert(twice.mask.end(), single.mask.begin(), single.mask.end());
  const auto g1 = backward(p, single).grads;
  const auto g2 = backward(p, twice).grads;
  // Summed per-sequence contributions are twice the single one; the mean halves it back.
  for_each_tensor([](const std::string& name, const auto& a, const auto& b) {
    INFO(name);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
  }, g1, g2);
}

TEST_CASE("single-position loss has no gradient path to future tokens") {
  const auto p = perturbed_params<double>(tiny(), 6);
  auto a = random_batch(1, 16, 30);
  std::fill(a.mask.begin(), a.mask.end(), 0);
  const int t = 5;
  a.mask[t] = 1;
  auto b = a;
  for (int pos = t + 1; pos < 16; ++pos) b.inputs[static_cast<std::size_t>(pos)] = (a.inputs[static_cast<std::size_t>(pos)] + 17) % 256;
  const auto ga = backward(p, a).grads;
  const auto gb = backward(p, b).grads;
  for_each_tensor([](const std::string& name, const auto& x, const auto& y) {
    INFO(name);
    CHECK((x - y).cwiseAbs().maxCoeff() <= 1e-12);
  }, ga, gb);
}

TEST_CASE("grad_check over random tiny configs") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed + 50);
    const int heads = 1 + static_cast<int>(rng.below(3));
    const int d_head = 2 + static_cast<int>(rng.below(4));
    ModelConfig c{.d_model = heads * d_head,
                  .n_layers = 1 + static_cast<int>(rng.below(2)),
                  .n_heads = heads,
                  .d_head = d_head,
                  .d_ff = 4 + static_cast<int>(rng.below(12)),
                  .seq_len = 12,
                  .n_rel_buckets = 8,
                  .rel_max_distance = 10};
    const auto p = perturbed_params<double>(c, seed);
    auto batch = random_batch(2, 12, seed + 9);
    batch.mask[3] = 0;
    const auto r = grad_check(p, batch, {.epsilon = 1e-5, .samples = 300, .seed = seed});
    INFO("seed " << seed << " worst " << r.worst_tensor);
    CHECK(r.coordinates == 300);
    CHECK(r.max_relative_error <= 1e-4);
  }
}

TEST_CASE("grad_check rejects a non-positive step") {
  const auto p = init_params<double>(tiny(), 1);
  CHECK_THROWS_AS(grad_check(p, random_batch(1, 8, 1), {.epsilon = 0.0}), PreconditionError);
}

TEST_CASE("gated MLP with identity activation checks to rounding error") {
  Rng rng(77);
  auto fill = [&](Eigen::Index r, Eigen::Index c) {
    Matrix<double> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  };
  const Matrix<double> h = fill(6, 5);
  const Matrix<double> readout = fill(6, 5);
  Matrix<double> wg = fill(5, 7), wu = fill(5, 7), wd = fill(7, 5);
  auto loss = [&] {
    MlpState<double> st;
    return (mlp_forward(h, wg, wu, wd, Activation::identity, st).array() * readout.array()).sum();
  };
  MlpState<double> st;
  mlp_forward(h, wg, wu, wd, Activation::identity, st);
  Matrix<double> dg = Matrix<double>::Zero(5, 7), du = dg, dd = Matrix<double>::Zero(7, 5);
  mlp_backward(readout, h, wg, wu, wd, Activation::identity, st, dg, du, dd);

  auto span_of = [](auto& m) { return std::span<double>(m.data(), static_cast<std::size_t>(m.size())); };
  auto cspan_of = [](const auto& m) { return std::span<const double>(m.data(), static_cast<std::size_t>(m.size())); };
  std::vector<CheckedTensor> tensors{{"w_gate", span_of(wg), cspan_of(dg)},
                                     {"w_up", span_of(wu), cspan_of(du)},
                                     {"w_down", span_of(wd), cspan_of(dd)}};
  const auto r = compare_gradients(tensors, loss, {.epsilon = 1e-2, .samples = 300, .seed = 1});
  CHECK(r.max_relative_error <= 1e-10);
}

TEST_CASE("non-finite weights are reported with the layer") {
  auto p = init_params<double>(tiny(), 1);
  p.layers[1].wq(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    backward(p, random_batch(1, 8, 2));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto p = perturbed_params<float>(tiny(), 12);
  const auto bytes = serialize(p);
  const auto q = deserialize(bytes);
  CHECK(q.config == p.config);
  CHECK(serialize(q) == bytes);
  CHECK_THROWS_AS(deserialize(bytes.substr(0, bytes.size() - 3)), InputError);
  auto corrupt = bytes;
  corrupt[0] = 'Y';
  CHECK_THROWS_AS(deserialize(corrupt), InputError);
}
