#include "xferlab/training/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xferlab/bytelm/checkpoint.hpp"
#include "xferlab/errors.hpp"
#include "xferlab/io.hpp"
#include "xferlab/rng.hpp"

namespace xferlab::training {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;
constexpr std::uint64_t kDevStream = 0x646576;
constexpr std::uint64_t kEpochStream = 0x65706f6368;

void require_valid(const TrainConfig& config) {
  if (auto problems = validate(config); !problems.empty()) throw ValidationError(std::move(problems));
}

void write_artifacts(const std::filesystem::path& dir, TrainResult& result) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  const auto ckpt = dir / "checkpoint.bin";
  bytelm::save_checkpoint(result.best, ckpt);
  result.record.best_checkpoint = ckpt.string();
  io::write_file_atomic(dir / "loss.csv", log_to_csv(result.log));
  io::write_file_atomic(dir / "run.json", to_json(result.record).dump(2) + "\n");
}

}  // namespace

double evaluate(const bytelm::Parameters<float>& params, const std::vector<bytelm::TokenBatch>& batches) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& b : batches) {
    if (b.batch == 0) continue;
    const auto l = bytelm::evaluate_loss(params, b);
    total += l.mean_loss * static_cast<double>(l.tokens);
    tokens += l.tokens;
  }
  if (tokens == 0) throw PreconditionError("evaluation set is empty");
  const double ppl = std::exp(total / static_cast<double>(tokens));
  if (!std::isfinite(ppl)) throw NumericError("non-finite evaluation perplexity");
  return ppl;
}

std::vector<bytelm::TokenBatch> eval_batches(const corpus::Corpus& c, int seq_len, int batch_sequences) {
  return corpus::PackedSequences(c, seq_len).all_batches(static_cast<std::size_t>(batch_sequences));
}

std::string log_to_csv(const std::vector<LogRow>& rows) {
  std::string out = "step,loss,dev_ppl\n";
  for (const auto& r : rows)
    out += std::to_string(r.step) + "," + io::exact(r.loss) + "," + (r.dev_ppl ? io::exact(*r.dev_ppl) : "") + "\n";
  return out;
}

nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& p : r.dev_history) history.push_back({{"step", p.step}, {"dev_ppl", p.perplexity}});
  nlohmann::json cfg;
  to_json(cfg, r.config);
  return {{"run_id", r.run_id},
          {"source", r.source},
          {"target", r.target},
          {"rung_bytes", r.rung_bytes},
          {"dev_history", history},
          {"best_dev_ppl", r.best_dev_ppl},
          {"best_step", r.best_step},
          {"best_checkpoint", r.best_checkpoint},
          {"test_ppl", r.test_ppl ? nlohmann::json(*r.test_ppl) : nlohmann::json(nullptr)},
          {"steps", r.steps},
          {"train_bytes", r.train_bytes},
          {"dev_bytes", r.dev_bytes},
          {"train_sequences", r.train_sequences},
          {"seeds", {{"run", r.config.seed}, {"init", r.init_seed}, {"data", r.data_seed}}},
          {"train_config", cfg},
          {"model_config", nlohmann::json(r.model)}};
}

RunRecord record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.source = j.at("source").get<std::string>();
  r.target = j.at("target").get<std::string>();
  r.rung_bytes = j.at("rung_bytes").get<std::int64_t>();
  for (const auto& p : j.at("dev_history"))
    r.dev_history.push_back({p.at("step").get<std::int64_t>(), p.at("dev_ppl").get<double>()});
  r.best_dev_ppl = j.at("best_dev_ppl").get<double>();
  r.best_step = j.at("best_step").get<std::int64_t>();
  r.best_checkpoint = j.at("best_checkpoint").get<std::string>();
  if (!j.at("test_ppl").is_null()) r.test_ppl = j.at("test_ppl").get<double>();
  r.steps = j.at("steps").get<std::int64_t>();
  r.train_bytes = j.at("train_bytes").get<std::size_t>();
  r.dev_bytes = j.at("dev_bytes").get<std::size_t>();
  r.train_sequences = j.at("train_sequences").get<std::size_t>();
  r.init_seed = j.at("seeds").at("init").get<std::uint64_t>();
  r.data_seed = j.at("seeds").at("data").get<std::uint64_t>();
  from_json(j.at("train_config"), r.config);
  r.model = j.at("model_config").get<bytelm::ModelConfig>();
  return r;
}

TrainResult train(bytelm::Parameters<float> params, const corpus::PackedSequences& data,
                  const std::vector<bytelm::TokenBatch>& dev, const TrainConfig& config, const ProgressFn& progress) {
  require_valid(config);
  if (data.size() == 0) throw PreconditionError("training data holds no full sequence");
  if (data.seq_len() != config.seq_len) throw PreconditionError("packed sequence length differs from config");

  const auto n = data.size();
  const auto per_batch = static_cast<std::size_t>(config.batch_sequences);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((n + per_batch - 1) / per_batch);
  const std::int64_t total = config.total_steps > 0 ? config.total_steps : config.epochs * steps_per_epoch;
  TrainConfig schedule = config;
  schedule.total_steps = static_cast<int>(total);

  TrainResult out;
  out.record.config = config;
  out.record.model = params.config;
  out.record.train_sequences = n;

  auto opt = OptimizerState<float>::zeros(params.config,
                                          {config.beta1, config.beta2, config.adam_epsilon, config.weight_decay});
  std::vector<std::size_t> order(n);
  double best = std::numeric_limits<double>::infinity();
  auto check_dev = [&](std::int64_t step) {
    const double ppl = evaluate(params, dev);
    out.record.dev_history.push_back({step, ppl});
    if (ppl < best) {
      best = ppl;
      out.best = params;
      out.record.best_step = step;
    }
    return ppl;
  };
  check_dev(0);

  std::int64_t step = 0;
  for (std::int64_t epoch = 0; step < total; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, kEpochStream + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n && step < total; start += per_batch) {
      const auto count = std::min(per_batch, n - start);
      const auto batch = data.batch(std::span<const std::size_t>(order.data() + start, count));
      auto lg = bytelm::backward(params, batch);
      if (!std::isfinite(lg.loss.mean_loss)) throw NumericError("non-finite training loss at step " + std::to_string(step));
      clip_global_norm(lg.grads, config.grad_clip);
      adamw_step(params, lg.grads, opt, lr_at(step, schedule));
      ++step;

      LogRow row{step, lg.loss.mean_loss, std::nullopt};
      if (step % config.eval_interval == 0 || step == total) row.dev_ppl = check_dev(step);
      out.log.push_back(row);
      if (progress) progress(row);
      if (row.dev_ppl && config.stop_at_dev_ppl > 0.0 && *row.dev_ppl <= config.stop_at_dev_ppl) {
        out.record.steps = step;
        out.record.best_dev_ppl = best;
        return out;
      }
    }
  }
  out.record.steps = step;
  out.record.best_dev_ppl = best;
  return out;
}

TrainResult pretrain(const bytelm::ModelConfig& model, const TrainConfig& config, const corpus::Corpus& c,
                     const std::filesystem::path& out_dir, const ProgressFn& progress) {
  require_valid(config);
  bytelm::require_valid(model);
  if (config.seq_len > model.seq_len) throw PreconditionError("training seq_len exceeds the model context");
  const std::size_t total = c.total_bytes();
  if (total == 0) throw PreconditionError("pretraining corpus is empty");
  if (total < static_cast<std::size_t>(config.batch_sequences) * static_cast<std::size_t>(config.seq_len))
    throw PreconditionError("pretraining corpus (" + std::to_string(total) + " bytes) is smaller than one batch");

  const auto dev_bytes = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(config.dev_fraction * static_cast<double>(total))));
  const auto data_seed = derive_seed(config.seed, kDevStream);
  const auto split = corpus::split_holdout(c, dev_bytes, data_seed);
  const corpus::PackedSequences packed(split.remainder, config.seq_len);
  const auto dev = eval_batches(split.heldout, config.seq_len, config.batch_sequences);
  if (dev.empty()) throw PreconditionError("dev split holds no full sequence; raise dev_fraction or corpus size");

  const auto init_seed = derive_seed(config.seed, kInitStream);
  auto result = train(bytelm::init_params<float>(model, init_seed), packed, dev, config, progress);
  result.record.run_id = "pretrain-" + c.language;
  result.record.source = c.language;
  result.record.target = c.language;
  result.record.train_bytes = split.remainder.total_bytes();
  result.record.dev_bytes = split.heldout.total_bytes();
  result.record.init_seed = init_seed;
  result.record.data_seed = data_seed;
  write_artifacts(out_dir, result);
  return result;
}

LadderResult finetune(const std::optional<bytelm::Parameters<float>>& init, const std::string& source,
                      const bytelm::ModelConfig& model, const std::vector<std::int64_t>& ladder,
                      const corpus::Corpus& pool, const corpus::Corpus& test, const TrainConfig& config,
                      const std::filesystem::path& out_dir, const ProgressFn& progress) {
  require_valid(config);
  bytelm::require_valid(model);
  if (ladder.empty()) throw PreconditionError("ladder is empty");
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    if (ladder[i] <= 0) throw PreconditionError("ladder rungs must be positive");
    if (i > 0 && ladder[i] <= ladder[i - 1]) throw PreconditionError("ladder must be strictly increasing");
  }
  const auto largest = ladder.back();
  if (static_cast<std::size_t>(largest) > pool.total_bytes())
    throw PreconditionError("rung of " + std::to_string(largest) + " bytes exceeds the " +
                            std::to_string(pool.total_bytes()) + "-byte target corpus");
  if (init && !(init->config == model)) throw PreconditionError("checkpoint config differs from the model config");

  const auto init_seed = derive_seed(config.seed, kInitStream);
  const auto start = init ? *init : bytelm::init_params<float>(model, init_seed);
  const auto test_batches = eval_batches(test, config.seq_len, config.batch_sequences);
  if (test_batches.empty()) throw PreconditionError("test corpus holds no full sequence");

  LadderResult out;
  out.curve.target = pool.language;
  out.curve.init = init ? source : std::string(transfer::kScratch);
  for (const auto rung : ladder) {
    TrainConfig rc = config;
    rc.phase = init ? Phase::finetune : Phase::scratch_ladder;
    rc.seed = derive_seed(config.seed, static_cast<std::uint64_t>(rung));
    if (config.total_steps == 0) rc.epochs = rung == largest ? config.largest_rung_epochs : config.epochs;
    if (config.warmup_by_size) rc.warmup_steps = warmup_for_rung(rung, config);

    const auto data_seed = derive_seed(rc.seed, kDevStream);
    const auto sample = corpus::sample_budget(pool, static_cast<std::size_t>(rung), data_seed);
    const auto dev_bytes = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(config.dev_fraction * static_cast<double>(rung))));
    const auto split = corpus::split_holdout(sample, dev_bytes, data_seed);
    const corpus::PackedSequences packed(split.remainder, rc.seq_len);
    const auto dev = eval_batches(split.heldout, rc.seq_len, rc.batch_sequences);
    if (dev.empty())
      throw PreconditionError("dev split of the " + std::to_string(rung) + "-byte rung holds no full sequence");

    auto result = train(start, packed, dev, rc, progress);
    result.record.run_id = out.curve.init + "-" + pool.language + "-" + std::to_string(rung);
    result.record.source = out.curve.init;
    result.record.target = pool.language;
    result.record.rung_bytes = rung;
    result.record.train_bytes = split.remainder.total_bytes();
    result.record.dev_bytes = split.heldout.total_bytes();
    result.record.init_seed = init ? 0 : init_seed;
    result.record.data_seed = data_seed;
    result.record.test_ppl = evaluate(result.best, test_batches);
    if (!out_dir.empty()) write_artifacts(out_dir / ("rung_" + std::to_string(rung)), result);
    out.curve.points.push_back({rung, *result.record.test_ppl});
    out.runs.push_back(std::move(result.record));
  }
  return out;
}

}  // namespace xferlab::training
