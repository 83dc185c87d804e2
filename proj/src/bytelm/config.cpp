#include "xferlab/bytelm/config.hpp"

#include <algorithm>

#include "xferlab/errors.hpp"

namespace xferlab::bytelm {

std::vector<std::string> validate(const ModelConfig& c) {
  std::vector<std::string> problems;
  auto positive = [&](int value, const char* name) {
    if (value < 1) problems.push_back(std::string(name) + " must be >= 1 (got " + std::to_string(value) + ")");
  };
  if (c.vocab_size != kVocabSize)
    problems.push_back("vocab_size must be 256 (got " + std::to_string(c.vocab_size) + ")");
  positive(c.d_model, "d_model");
  positive(c.n_layers, "n_layers");
  positive(c.n_heads, "n_heads");
  positive(c.d_head, "d_head");
  positive(c.d_ff, "d_ff");
  positive(c.n_rel_buckets, "n_rel_buckets");
  positive(c.rel_max_distance, "rel_max_distance");
  if (c.seq_len < 2) problems.push_back("seq_len must be >= 2 (got " + std::to_string(c.seq_len) + ")");
  if (c.n_heads >= 1 && c.d_head >= 1 && c.d_model != c.n_heads * c.d_head)
    problems.push_back("d_model must equal n_heads * d_head (" + std::to_string(c.d_model) +
                       " != " + std::to_string(c.n_heads) + " * " + std::to_string(c.d_head) + ")");
  if (c.n_rel_buckets >= 1 && c.rel_max_distance < c.n_rel_buckets / 2)
    problems.push_back("rel_max_distance must be >= n_rel_buckets / 2");
  return problems;
}

void require_valid(const ModelConfig& config) {
  auto problems = validate(config);
  if (!problems.empty()) throw ValidationError(std::move(problems));
}

ModelConfig paper_preset() {
  return ModelConfig{.d_model = 640,
                     .n_layers = 10,
                     .n_heads = 10,
                     .d_head = 64,
                     .d_ff = 2560,
                     .seq_len = 1024,
                     .n_rel_buckets = 32,
                     .rel_max_distance = 128};
}

ModelConfig desk_preset() { return ModelConfig{}; }

void to_json(nlohmann::json& j, const ModelConfig& m) {
  j = {{"vocab_size", m.vocab_size}, {"d_model", m.d_model},   {"n_layers", m.n_layers},
       {"n_heads", m.n_heads},       {"d_head", m.d_head},     {"d_ff", m.d_ff},
       {"seq_len", m.seq_len},       {"n_rel_buckets", m.n_rel_buckets},
       {"rel_max_distance", m.rel_max_distance}};
}

void from_json(const nlohmann::json& j, ModelConfig& m) {
  static const std::vector<std::string> known = {"preset", "vocab_size", "d_model", "n_layers", "n_heads", "d_head",
                                                 "d_ff", "seq_len", "n_rel_buckets", "rel_max_distance"};
  if (!j.is_object()) throw InputError("model config must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) throw InputError("unknown model field '" + key + "'");
  ModelConfig d;
  if (j.contains("preset")) {
    const auto preset = j.at("preset").get<std::string>();
    if (preset == "paper") d = paper_preset();
    else if (preset != "desk") throw InputError("unknown model preset '" + preset + "'");
  }
  m = d;
  m.vocab_size = j.value("vocab_size", d.vocab_size);
  m.d_model = j.value("d_model", d.d_model);
  m.n_layers = j.value("n_layers", d.n_layers);
  m.n_heads = j.value("n_heads", d.n_heads);
  m.d_head = j.value("d_head", d.d_head);
  m.d_ff = j.value("d_ff", d.d_ff);
  m.seq_len = j.value("seq_len", d.seq_len);
  m.n_rel_buckets = j.value("n_rel_buckets", d.n_rel_buckets);
  m.rel_max_distance = j.value("rel_max_distance", d.rel_max_distance);
}

}  // namespace xferlab::bytelm
