#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xferlab/bytelm/config.hpp"
#include "xferlab/corpus/corpus.hpp"
#include "xferlab/corpus/synthetic.hpp"
#include "xferlab/training/schedule.hpp"

namespace xferlab::pipeline {

inline constexpr int kManifestVersion = 1;

/// A source or target language: either a corpus file or a synthetic spec.
struct LanguageEntry {
  std::string language;
  std::optional<std::filesystem::path> corpus_path;
  std::optional<corpus::SyntheticLangSpec> synthetic;
  // Synthetic: bytes to generate. Corpus file: budget to sample (0 = all).
  std::size_t bytes = 0;
  // Targets only: bytes held out as the fixed test set.
  std::size_t test_bytes = 0;
  nlohmann::json section;  // parent references resolved, paths absolute
};

struct AnalysisOptions {
  bool contamination = true;
  double threshold = 0.6;
  std::size_t langid_bytes = 200000;
  std::size_t permutations = 10000;
  bool exclude_largest_rung = true;
  std::optional<std::filesystem::path> distance_table;
  std::string unit = "MB";
};

struct Manifest {
  int version = kManifestVersion;
  std::string name;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  bytelm::ModelConfig model;
  training::TrainConfig pretrain;
  training::TrainConfig finetune;
  std::vector<LanguageEntry> sources;
  std::vector<LanguageEntry> targets;
  std::vector<std::int64_t> ladder;
  AnalysisOptions analysis;
  // Analysis-only mode: curve CSVs to import instead of training.
  std::optional<std::filesystem::path> imported_curves;
  nlohmann::json snapshot;  // normalized, self-contained copy for the store

  bool analysis_only() const { return imported_curves.has_value(); }
};

struct ManifestCheck {
  Manifest manifest;
  std::vector<std::string> errors;  // "field.path: message"
};

/// Parses and checks every field and cross-field constraint, collecting all
/// problems instead of stopping at the first. Relative paths resolve against
/// base_dir. Target corpora are materialized to check the ladder against
/// their real size.
ManifestCheck check_manifest(const nlohmann::json& j, const std::filesystem::path& base_dir);

/// check_manifest on a file; throws ValidationError listing every problem.
Manifest load_manifest(const std::filesystem::path& path);


/// Deterministic corpus for an entry. Targets are returned whole; use
/// split_target for the test/pool split.
corpus::Corpus materialize(const LanguageEntry& entry, std::uint64_t seed);

struct TargetSplit {
  corpus::Corpus test;
  corpus::Corpus pool;
};

TargetSplit split_target(const corpus::Corpus& corpus, const LanguageEntry& entry, std::uint64_t seed);

}  // namespace xferlab::pipeline
