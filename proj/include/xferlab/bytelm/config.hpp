#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace xferlab::bytelm {

inline constexpr int kVocabSize = 256;

/// Decoder-only transformer hyperparameters. The vocabulary is always the 256
/// byte values; there are no special tokens.
struct ModelConfig {
  int vocab_size = kVocabSize;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_head = 16;
  int d_ff = 128;
  int seq_len = 64;
  int n_rel_buckets = 32;
  int rel_max_distance = 128;

  bool operator==(const ModelConfig&) const = default;
};

/// Every violated constraint, one message per field.
std::vector<std::string> validate(const ModelConfig& config);

/// Throws ValidationError if validate() reports anything.
void require_valid(const ModelConfig& config);

/// 640-wide, 10-layer model (about 65M parameters).
ModelConfig paper_preset();

/// Small model used for desk-scale experiments and tests.
ModelConfig desk_preset();

void to_json(nlohmann::json& j, const ModelConfig& config);

/// Accepts an optional "preset" ("desk" or "paper") with per-field
/// overrides; unknown fields are rejected.
void from_json(const nlohmann::json& j, ModelConfig& config);

}  // namespace xferlab::bytelm
