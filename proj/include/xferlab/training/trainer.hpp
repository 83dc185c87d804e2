#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xferlab/bytelm/model.hpp"
#include "xferlab/corpus/corpus.hpp"
#include "xferlab/training/optimizer.hpp"
#include "xferlab/training/schedule.hpp"
#include "xferlab/transfer/transfer.hpp"

namespace xferlab::training {

/// e^(masked mean loss over every eval token). Token losses are pooled
/// across batches, so uneven batch sizes do not skew the mean.
double evaluate(const bytelm::Parameters<float>& params, const std::vector<bytelm::TokenBatch>& batches);

struct LogRow {
  std::int64_t step = 0;
  double loss = 0.0;
  std::optional<double> dev_ppl;
};

struct DevPoint {
  std::int64_t step = 0;
  double perplexity = 0.0;
};

struct RunRecord {
  std::string run_id;
  std::string source;  // "scratch" for random init
  std::string target;
  std::int64_t rung_bytes = 0;  // 0 for pretraining
  std::vector<DevPoint> dev_history;
  double best_dev_ppl = 0.0;
  std::int64_t best_step = 0;
  std::string best_checkpoint;
  std::optional<double> test_ppl;
  std::int64_t steps = 0;
  std::size_t train_bytes = 0;
  std::size_t dev_bytes = 0;
  std::size_t train_sequences = 0;
  std::uint64_t init_seed = 0;
  std::uint64_t data_seed = 0;
  TrainConfig config;
  bytelm::ModelConfig model;
};

nlohmann::json to_json(const RunRecord& record);
RunRecord record_from_json(const nlohmann::json& j);

/// `step,loss,dev_ppl` with dev_ppl empty on steps without evaluation.
std::string log_to_csv(const std::vector<LogRow>& rows);

struct TrainResult {
  bytelm::Parameters<float> best;
  RunRecord record;
  std::vector<LogRow> log;
};

using ProgressFn = std::function<void(const LogRow&)>;

/// The shared loop: seeded per-epoch shuffles of the packed sequences,
/// global-norm clipping, AdamW, and a dev evaluation at step 0, every
/// eval_interval steps and at the end. The parameters with the lowest dev
/// perplexity are kept.
TrainResult train(bytelm::Parameters<float> init, const corpus::PackedSequences& data,
                  const std::vector<bytelm::TokenBatch>& dev, const TrainConfig& config,
                  const ProgressFn& progress = {});

/// Holds out dev_fraction of the corpus, trains on the rest from a fresh
/// initialization. With a non-empty out_dir writes checkpoint.bin, loss.csv
/// and run.json there.
TrainResult pretrain(const bytelm::ModelConfig& model, const TrainConfig& config, const corpus::Corpus& corpus,
                     const std::filesystem::path& out_dir = {}, const ProgressFn& progress = {});

struct LadderResult {
  transfer::PerplexityCurve curve;
  std::vector<RunRecord> runs;
};

/// One independent run per rung, all starting from `init` (or a seeded
/// random initialization when empty). Each rung samples its bytes from
/// `pool` with a seed derived from the rung size alone, so results do not
/// depend on ladder order. Test perplexity is measured on `test` with the
/// best-dev parameters. With a non-empty out_dir each rung writes its
/// artifacts under rung_<bytes>/.
LadderResult finetune(const std::optional<bytelm::Parameters<float>>& init, const std::string& source,
                      const bytelm::ModelConfig& model, const std::vector<std::int64_t>& ladder,
                      const corpus::Corpus& pool, const corpus::Corpus& test, const TrainConfig& config,
                      const std::filesystem::path& out_dir = {}, const ProgressFn& progress = {});

std::vector<bytelm::TokenBatch> eval_batches(const corpus::Corpus& corpus, int seq_len, int batch_sequences);

}  // namespace xferlab::training
