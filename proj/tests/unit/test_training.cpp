#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "xferlab/bytelm/checkpoint.hpp"
#include "xferlab/corpus/synthetic.hpp"
#include "xferlab/errors.hpp"
#include "xferlab/io.hpp"
#include "xferlab/training/trainer.hpp"

using namespace xferlab;
using namespace xferlab::training;

namespace {

bytelm::ModelConfig tiny_model() {
  bytelm::ModelConfig m;
  m.d_model = 32;
  m.n_heads = 2;
  m.d_head = 16;
  m.n_layers = 1;
  m.d_ff = 64;
  m.seq_len = 32;
  return m;
}

TrainConfig quick(int steps) {
  TrainConfig c;
  c.peak_lr = 3e-3;
  c.final_lr = 3e-4;
  c.total_steps = steps;
  c.batch_sequences = 8;
  c.seq_len = 32;
  c.eval_interval = 10;
  c.dev_fraction = 0.05;
  c.seed = 11;
  return c;
}

corpus::Corpus synth(const std::string& lang, std::size_t bytes, std::uint64_t seed) {
  corpus::SyntheticLangSpec s;
  s.language = lang;
  s.seed = seed;
  s.vocab_size = 50;
  return corpus::gen_synthetic(s, bytes, seed);
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("xferlab_training_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("lr_at examples") {
  auto c = pretrain_preset();
  c.total_steps = 1000;
  c.warmup_steps = 0;
  CHECK(lr_at(0, c) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(lr_at(1000, c) == doctest::Approx(2e-5).epsilon(1e-12));
  CHECK(lr_at(5000, c) == doctest::Approx(2e-5).epsilon(1e-12));
  CHECK(lr_at(500, c) == doctest::Approx(2e-5 + (2e-4 - 2e-5) * 0.5 * (1 + std::cos(std::numbers::pi * 0.5))).epsilon(1e-12));
  CHECK(lr_at(500, c) == doctest::Approx(1.1e-4).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(-1, c), PreconditionError);

  auto f = finetune_preset();
  CHECK(lr_at(0, f) == 2e-5);
  CHECK(lr_at(123456, f) == 2e-5);
}

TEST_CASE("lr_at is continuous at the warmup boundary and non-increasing after") {
  auto c = pretrain_preset();
  c.total_steps = 400;
  c.warmup_steps = 100;
  CHECK(lr_at(0, c) == 0.0);
  CHECK(lr_at(50, c) == doctest::Approx(1e-4));
  CHECK(lr_at(100, c) == doctest::Approx(2e-4));
  CHECK(lr_at(99, c) == doctest::Approx(2e-4 * 0.99));
  double prev = lr_at(100, c);
  for (int s = 101; s <= 450; ++s) {
    const double lr = lr_at(s, c);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("warmup grows with rung size and caps at 3000") {
  const auto f = finetune_preset();
  CHECK(warmup_for_rung(6'000'000, f) == 3);
  CHECK(warmup_for_rung(60'000, f) == 0);
  CHECK(warmup_for_rung(6'000'000'000LL, f) == 3000);
  int prev = 0;
  for (std::int64_t s : {6'000'000LL, 19'000'000LL, 60'000'000LL, 189'000'000LL, 600'000'000LL, 6'000'000'000LL}) {
    CHECK(warmup_for_rung(s, f) >= prev);
    prev = warmup_for_rung(s, f);
  }
}

TEST_CASE("adamw examples") {
  bytelm::ModelConfig m = tiny_model();
  auto params = bytelm::init_params<double>(m, 3);
  const auto before = params;
  auto zero = bytelm::zeros_like<double>(m);

  SUBCASE("zero gradient without decay leaves parameters unchanged") {
    auto st = OptimizerState<double>::zeros(m, {0.9, 0.999, 1e-8, 0.0});
    adamw_step(params, zero, st, 1e-3);
    CHECK(params.embedding == before.embedding);
    CHECK(params.layers[0].w_down == before.layers[0].w_down);
    CHECK(st.step == 1);
  }
  SUBCASE("first step moves by exactly lr") {
    params.embedding.setZero();
    auto g = zero;
    g.embedding(0, 0) = 1.0;
    auto st = OptimizerState<double>::zeros(m, {0.9, 0.999, 0.0, 0.0});
    adamw_step(params, g, st, 0.01);
    CHECK(params.embedding(0, 0) == doctest::Approx(-0.01).epsilon(1e-14));
    CHECK(params.embedding(0, 1) == 0.0);
  }
  SUBCASE("decoupled decay") {
    params.embedding(0, 0) = 1.0;
    auto st = OptimizerState<double>::zeros(m, {0.9, 0.999, 1e-8, 0.1});
    adamw_step(params, zero, st, 0.01);
    CHECK(params.embedding(0, 0) == doctest::Approx(0.999).epsilon(1e-15));
  }
  SUBCASE("lr 0 without decay touches only the state") {
    auto g = bytelm::init_params<double>(m, 4);
    auto st = OptimizerState<double>::zeros(m, {0.9, 0.999, 1e-8, 0.0});
    adamw_step(params, g, st, 0.0);
    CHECK(params.embedding == before.embedding);
    CHECK(params.rel_bias == before.rel_bias);
    CHECK(st.m.embedding.cwiseAbs().maxCoeff() > 0.0);
    CHECK(st.step == 1);
  }
  SUBCASE("non-finite gradient names the tensor") {
    auto g = zero;
    g.layers[0].wq(1, 1) = std::nan("");
    auto st = OptimizerState<double>::zeros(m);
    try {
      adamw_step(params, g, st, 0.01);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("layers.0.wq") != std::string::npos);
    }
    CHECK(st.step == 0);
    CHECK(params.layers[0].wq == before.layers[0].wq);
  }
}

TEST_CASE("global norm clipping") {
  auto m = tiny_model();
  auto g = bytelm::zeros_like<double>(m);
  g.embedding(0, 0) = 3.0;
  g.final_norm(0) = 4.0;
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g.embedding(0, 0) == doctest::Approx(0.6));
  CHECK(g.final_norm(0) == doctest::Approx(0.8));
  CHECK(clip_global_norm(g, 10.0) == doctest::Approx(1.0));
  CHECK(g.final_norm(0) == doctest::Approx(0.8));
}

TEST_CASE("evaluate") {
  auto m = tiny_model();
  auto params = bytelm::init_params<float>(m, 1);
  params.embedding.setZero();
  const auto data = synth("a", 4000, 1);
  const auto batches = eval_batches(data, 32, 8);
  CHECK(evaluate(params, batches) == doctest::Approx(256.0).epsilon(1e-3 / 256));
  CHECK_THROWS_AS(evaluate(params, {}), PreconditionError);

  const auto p1 = bytelm::init_params<float>(m, 9);
  const double a = evaluate(p1, batches), b = evaluate(p1, batches);
  CHECK(a == b);
}

TEST_CASE("pretrain is deterministic and writes artifacts") {
  const auto m = tiny_model();
  const auto data = synth("src", 30000, 5);
  const auto cfg = quick(30);
  const auto d1 = scratch_dir("det1"), d2 = scratch_dir("det2");
  const auto a = pretrain(m, cfg, data, d1);
  const auto b = pretrain(m, cfg, data, d2);
  CHECK(io::read_file(d1 / "loss.csv") == io::read_file(d2 / "loss.csv"));
  CHECK(io::read_file(d1 / "checkpoint.bin") == io::read_file(d2 / "checkpoint.bin"));
  CHECK(a.record.steps == 30);
  CHECK(a.log.size() == 30);
  CHECK(a.record.dev_history.size() == 4);  // steps 0, 10, 20, 30

  double best = 1e300;
  for (const auto& p : a.record.dev_history) best = std::min(best, p.perplexity);
  CHECK(a.record.best_dev_ppl == best);
  CHECK(a.record.best_dev_ppl < a.record.dev_history.front().perplexity);

  const auto rec = record_from_json(nlohmann::json::parse(io::read_file(d1 / "run.json")));
  CHECK(rec.best_dev_ppl == a.record.best_dev_ppl);
  CHECK(rec.config.seed == cfg.seed);
  CHECK(rec.model == m);

  const auto csv = io::read_file(d1 / "loss.csv");
  CHECK(csv.rfind("step,loss,dev_ppl\n", 0) == 0);
}

TEST_CASE("pretrain preconditions") {
  const auto m = tiny_model();
  corpus::Corpus empty;
  empty.language = "x";
  CHECK_THROWS_AS(pretrain(m, quick(5), empty), PreconditionError);
  CHECK_THROWS_AS(pretrain(m, quick(5), synth("x", 100, 1)), PreconditionError);
  auto bad = quick(5);
  bad.batch_sequences = 0;
  CHECK_THROWS_AS(pretrain(m, bad, synth("x", 20000, 1)), ValidationError);
}

TEST_CASE("memorizing one repeated sentence") {
  bytelm::ModelConfig m;  // desk defaults: d64, 2 layers
  corpus::Corpus c;
  c.language = "memo";
  const std::string sentence = "the quick brown fox jumps over the lazy dog and runs far, away.";
  REQUIRE(sentence.size() == 63);
  for (int i = 0; i < 400; ++i) c.documents.push_back(sentence);
  TrainConfig cfg;
  cfg.peak_lr = 3e-3;
  cfg.final_lr = 3e-4;
  cfg.total_steps = 5000;
  cfg.batch_sequences = 8;
  cfg.seq_len = 64;
  cfg.eval_interval = 25;
  cfg.stop_at_dev_ppl = 1.1;
  cfg.dev_fraction = 0.05;
  const auto r = pretrain(m, cfg, c);
  CHECK(r.record.best_dev_ppl <= 1.1);
  CHECK(r.record.steps <= 5000);
}

TEST_CASE("finetune ladder") {
  const auto m = tiny_model();
  auto pool = synth("tgt", 60000, 2);
  auto split = corpus::split_holdout(pool, 4000, 99);
  split.remainder.language = "tgt";
  auto cfg = quick(0);
  cfg.total_steps = 0;
  cfg.epochs = 2;
  cfg.largest_rung_epochs = 1;
  cfg.schedule = Schedule::constant;
  cfg.peak_lr = 2e-3;

  const std::vector<std::int64_t> ladder = {4000, 8000, 16000};
  const auto dir = scratch_dir("ladder");
  const auto scratch = finetune(std::nullopt, "", m, ladder, split.remainder, split.heldout, cfg, dir);
  CHECK(scratch.curve.is_scratch());
  CHECK(scratch.curve.target == "tgt");
  REQUIRE(scratch.curve.points.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(scratch.curve.points[i].size_bytes == ladder[i]);

  SUBCASE("rungs are independent of ladder order and of each other") {
    const auto single = finetune(std::nullopt, "", m, {8000}, split.remainder, split.heldout, cfg);
    // The largest-rung epoch rule would otherwise treat 8000 differently.
    auto cfg_same = cfg;
    cfg_same.largest_rung_epochs = cfg.epochs;
    const auto a = finetune(std::nullopt, "", m, {4000, 8000}, split.remainder, split.heldout, cfg_same);
    const auto b = finetune(std::nullopt, "", m, {8000}, split.remainder, split.heldout, cfg_same);
    CHECK(a.curve.points[1].perplexity == b.curve.points[0].perplexity);
    CHECK(single.runs[0].steps > 0);
  }
  SUBCASE("checkpoint init gives a curve on the same grid") {
    const auto src = pretrain(m, quick(20), synth("src", 30000, 5));
    const auto ft = finetune(src.best, "src", m, ladder, split.remainder, split.heldout, cfg);
    CHECK(ft.curve.init == "src");
    REQUIRE(ft.curve.points.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(ft.curve.points[i].size_bytes == scratch.curve.points[i].size_bytes);
  }
  SUBCASE("reported test perplexity matches the stored checkpoint") {
    for (const auto& run : scratch.runs) {
      const auto params = bytelm::load_checkpoint(run.best_checkpoint);
      CHECK(evaluate(params, eval_batches(split.heldout, cfg.seq_len, cfg.batch_sequences)) == *run.test_ppl);
      CHECK(std::filesystem::exists(std::filesystem::path(run.best_checkpoint).parent_path() / "run.json"));
    }
  }
  SUBCASE("largest rung uses its own epoch count") {
    const auto& last = scratch.runs.back();
    CHECK(last.config.epochs == 1);
    CHECK(scratch.runs.front().config.epochs == 2);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(finetune(std::nullopt, "", m, {8000, 4000}, split.remainder, split.heldout, cfg), PreconditionError);
    CHECK_THROWS_AS(finetune(std::nullopt, "", m, {1'000'000}, split.remainder, split.heldout, cfg), PreconditionError);
    auto other = m;
    other.d_ff = 32;
    const auto wrong = bytelm::init_params<float>(other, 1);
    CHECK_THROWS_AS(finetune(wrong, "x", m, ladder, split.remainder, split.heldout, cfg), PreconditionError);
  }
}
