#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xferlab/pipeline/manifest.hpp"
#include "xferlab/transfer/transfer.hpp"

namespace xferlab::pipeline {

// Store layout under the output directory:
//   manifest.json                      normalized manifest snapshot
//   corpora/source/<lang>.jsonl        pretraining corpora
//   corpora/target/<lang>.{pool,test}.jsonl
//   checkpoints/<source>/              checkpoint.bin, loss.csv, run.json
//   curves/<target>__<init>.csv        one perplexity curve per ladder
//   runs/<target>__<init>/rung_<n>/    per-rung checkpoint, loss log, record
//   transfer/<source>__<target>.json   D_T estimates
//   transfer/dt_records.jsonl
//   analysis/                          contamination, covariates, correlations
//   reports/                           tables and figure data
// Each stage output has a <file>.key sidecar holding a hash of everything the
// stage read. A stage whose output exists with a matching key is skipped.

enum class StageStatus { computed, skipped, failed };

std::string to_string(StageStatus status);

struct StageOutcome {
  std::string name;  // e.g. "pretrain:en", "ladder:es__scratch"
  StageStatus status = StageStatus::computed;
  std::string detail;
};

struct RunSummary {
  std::string manifest_hash;
  std::vector<StageOutcome> stages;

  bool ok() const;
  std::size_t count(StageStatus status) const;
  nlohmann::json to_json() const;
};

struct RunOptions {
  std::ostream* log = nullptr;  // progress lines; silent when null
  bool verbose = false;         // also log training steps
};

/// Executes every stage of the manifest in dependency order. A failing stage
/// is recorded, its dependents are marked failed, and independent stages
/// still run.
RunSummary run(const Manifest& manifest, const RunOptions& options = {});

struct ReportOptions {
  std::optional<transfer::Unit> unit;  // defaults to the stored manifest's unit
};

/// Regenerates reports/ from what is in the store. Returns the files written
/// (relative to the store) and notes about reports that could not be made.
struct ReportResult {
  std::vector<std::string> files;
  std::vector<std::string> notes;
};

ReportResult write_report(const std::filesystem::path& store, const ReportOptions& options = {});

}  // namespace xferlab::pipeline
