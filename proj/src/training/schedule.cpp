#include "xferlab/training/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "xferlab/errors.hpp"

namespace xferlab::training {

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::pretrain: return "pretrain";
    case Phase::finetune: return "finetune";
    case Phase::scratch_ladder: return "scratch-ladder";
  }
  return "?";
}

Phase parse_phase(const std::string& name) {
  if (name == "pretrain") return Phase::pretrain;
  if (name == "finetune") return Phase::finetune;
  if (name == "scratch-ladder") return Phase::scratch_ladder;
  throw InputError("unknown phase '" + name + "'");
}

TrainConfig pretrain_preset() {
  TrainConfig c;
  c.phase = Phase::pretrain;
  c.schedule = Schedule::cosine;
  c.peak_lr = 2e-4;
  c.final_lr = 2e-5;
  return c;
}

TrainConfig finetune_preset() {
  TrainConfig c;
  c.phase = Phase::finetune;
  c.schedule = Schedule::constant;
  c.peak_lr = 2e-5;
  c.final_lr = 2e-5;
  c.epochs = 10;
  c.largest_rung_epochs = 3;
  c.warmup_by_size = true;
  return c;
}

std::vector<std::string> validate(const TrainConfig& c) {
  std::vector<std::string> p;
  if (!(c.peak_lr >= 0.0)) p.push_back("peak_lr must be >= 0");
  if (!(c.final_lr >= 0.0)) p.push_back("final_lr must be >= 0");
  if (c.warmup_steps < 0 || c.warmup_steps > c.max_warmup_steps)
    p.push_back("warmup_steps must be in [0, " + std::to_string(c.max_warmup_steps) + "]");
  if (c.total_steps < 0) p.push_back("total_steps must be >= 0");
  if (c.epochs < 0) p.push_back("epochs must be >= 0");
  if (c.total_steps == 0 && c.epochs == 0) p.push_back("one of total_steps or epochs must be set");
  if (c.largest_rung_epochs < 1) p.push_back("largest_rung_epochs must be >= 1");
  if (c.batch_sequences < 1) p.push_back("batch_sequences must be >= 1");
  if (c.seq_len < 2) p.push_back("seq_len must be >= 2");
  if (c.eval_interval < 1) p.push_back("eval_interval must be >= 1");
  if (!(c.dev_fraction > 0.0 && c.dev_fraction < 1.0)) p.push_back("dev_fraction must be in (0, 1)");
  if (!(c.warmup_bytes_per_step > 0.0)) p.push_back("warmup_bytes_per_step must be > 0");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) p.push_back("beta1 must be in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) p.push_back("beta2 must be in [0, 1)");
  if (!(c.adam_epsilon >= 0.0)) p.push_back("adam_epsilon must be >= 0");
  if (!(c.weight_decay >= 0.0)) p.push_back("weight_decay must be >= 0");
  return p;
}

double lr_at(std::int64_t step, const TrainConfig& c) {
  if (step < 0) throw PreconditionError("step must be >= 0");
  if (step < c.warmup_steps) return c.peak_lr * static_cast<double>(step) / c.warmup_steps;
  if (c.schedule == Schedule::constant) return c.peak_lr;
  const double span = static_cast<double>(c.total_steps - c.warmup_steps);
  if (span <= 0.0) return c.final_lr;
  const double progress = std::min(1.0, static_cast<double>(step - c.warmup_steps) / span);
  return c.final_lr + (c.peak_lr - c.final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

int warmup_for_rung(std::int64_t rung_bytes, const TrainConfig& c) {
  const auto steps = static_cast<std::int64_t>(std::floor(static_cast<double>(rung_bytes) / c.warmup_bytes_per_step));
  return static_cast<int>(std::min<std::int64_t>(c.max_warmup_steps, steps));
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"phase", to_string(c.phase)},
                     {"schedule", c.schedule == Schedule::cosine ? "cosine" : "constant"},
                     {"peak_lr", c.peak_lr},
                     {"final_lr", c.final_lr},
                     {"warmup_steps", c.warmup_steps},
                     {"total_steps", c.total_steps},
                     {"epochs", c.epochs},
                     {"largest_rung_epochs", c.largest_rung_epochs},
                     {"warmup_by_size", c.warmup_by_size},
                     {"warmup_bytes_per_step", c.warmup_bytes_per_step},
                     {"max_warmup_steps", c.max_warmup_steps},
                     {"batch_sequences", c.batch_sequences},
                     {"seq_len", c.seq_len},
                     {"eval_interval", c.eval_interval},
                     {"seed", c.seed},
                     {"grad_clip", c.grad_clip},
                     {"dev_fraction", c.dev_fraction},
                     {"stop_at_dev_ppl", c.stop_at_dev_ppl},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_epsilon", c.adam_epsilon},
                     {"weight_decay", c.weight_decay}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::vector<std::string> known = {
      "phase", "schedule", "peak_lr", "final_lr", "warmup_steps", "total_steps", "epochs",
      "largest_rung_epochs", "warmup_by_size", "warmup_bytes_per_step", "max_warmup_steps",
      "batch_sequences", "seq_len", "eval_interval", "seed", "grad_clip", "dev_fraction",
      "stop_at_dev_ppl", "beta1", "beta2", "adam_epsilon", "weight_decay", "preset"};
  if (!j.is_object()) throw InputError("training config must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw InputError("unknown training field '" + key + "'");

  TrainConfig d;
  if (j.contains("preset")) {
    const auto preset = j.at("preset").get<std::string>();
    if (preset == "pretrain") d = pretrain_preset();
    else if (preset == "finetune") d = finetune_preset();
    else throw InputError("unknown training preset '" + preset + "'");
  }
  c = d;
  if (j.contains("phase")) c.phase = parse_phase(j.at("phase").get<std::string>());
  if (j.contains("schedule")) {
    const auto s = j.at("schedule").get<std::string>();
    if (s == "cosine") c.schedule = Schedule::cosine;
    else if (s == "constant") c.schedule = Schedule::constant;
    else throw InputError("unknown schedule '" + s + "'");
  }
  c.peak_lr = j.value("peak_lr", d.peak_lr);
  c.final_lr = j.value("final_lr", d.final_lr);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.total_steps = j.value("total_steps", d.total_steps);
  c.epochs = j.value("epochs", d.epochs);
  c.largest_rung_epochs = j.value("largest_rung_epochs", d.largest_rung_epochs);
  c.warmup_by_size = j.value("warmup_by_size", d.warmup_by_size);
  c.warmup_bytes_per_step = j.value("warmup_bytes_per_step", d.warmup_bytes_per_step);
  c.max_warmup_steps = j.value("max_warmup_steps", d.max_warmup_steps);
  c.batch_sequences = j.value("batch_sequences", d.batch_sequences);
  c.seq_len = j.value("seq_len", d.seq_len);
  c.eval_interval = j.value("eval_interval", d.eval_interval);
  c.seed = j.value("seed", d.seed);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.dev_fraction = j.value("dev_fraction", d.dev_fraction);
  c.stop_at_dev_ppl = j.value("stop_at_dev_ppl", d.stop_at_dev_ppl);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_epsilon = j.value("adam_epsilon", d.adam_epsilon);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
}

}  // namespace xferlab::training
