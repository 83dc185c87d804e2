#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace xferlab::training {

enum class Phase { pretrain, finetune, scratch_ladder };
enum class Schedule { cosine, constant };

std::string to_string(Phase phase);
Phase parse_phase(const std::string& name);

struct TrainConfig {
  Phase phase = Phase::pretrain;
  Schedule schedule = Schedule::cosine;
  double peak_lr = 2e-4;
  double final_lr = 2e-5;
  int warmup_steps = 0;
  // Fixed step budget when > 0, otherwise `epochs` passes over the data.
  int total_steps = 0;
  int epochs = 0;
  // Epochs used instead of `epochs` on the largest ladder rung.
  int largest_rung_epochs = 3;
  // Finetuning warmup: min(max_warmup_steps, floor(rung / warmup_bytes_per_step)).
  bool warmup_by_size = false;
  double warmup_bytes_per_step = 2e6;
  int max_warmup_steps = 3000;
  int batch_sequences = 16;
  int seq_len = 64;
  int eval_interval = 100;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;  // global-norm clip, <= 0 disables
  double dev_fraction = 0.01;
  // Stop once dev perplexity is at or below this value (0 disables).
  double stop_at_dev_ppl = 0.0;

  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.01;
};

/// Cosine 2e-4 -> 2e-5.
TrainConfig pretrain_preset();
/// Constant 2e-5, 10 epochs (3 on the largest rung), warmup by rung size.
TrainConfig finetune_preset();

std::vector<std::string> validate(const TrainConfig& config);

/// Learning rate for the update following `step` completed updates. Linear
/// warmup from 0 to peak_lr, then either constant or cosine to final_lr at
/// `total_steps`; later steps stay at final_lr.
double lr_at(std::int64_t step, const TrainConfig& config);

int warmup_for_rung(std::int64_t rung_bytes, const TrainConfig& config);

void to_json(nlohmann::json& j, const TrainConfig& config);
void from_json(const nlohmann::json& j, TrainConfig& config);

}  // namespace xferlab::training
