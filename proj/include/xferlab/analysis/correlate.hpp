#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xferlab/analysis/stats.hpp"

namespace xferlab::analysis {

/// One D_T observation.
struct DtRecord {
  std::string source;
  std::string target;
  std::int64_t rung_bytes = 0;
  double dt_bytes = 0.0;
};

std::vector<DtRecord> read_dt_records(std::string_view jsonl);
std::string write_dt_records(const std::vector<DtRecord>& records);

/// Per-(source, target) covariate values.
struct Covariate {
  std::string name;
  std::map<std::pair<std::string, std::string>, double> values;
  bool symmetric = false;

  std::optional<double> at(const std::string& source, const std::string& target) const;
};

/// CSV with header source,target,value.
Covariate read_covariate_csv(std::string_view csv, const std::string& name);

inline const std::vector<std::string> kDistanceMeasures = {"syntactic", "geographic", "phonological",
                                                           "genetic",   "inventory",  "featural"};

/// Pairwise language distances per measure, each in [0, 1], symmetric and
/// zero on the diagonal.
class DistanceTable {
 public:
  /// CSV with header measure,lang1,lang2,value.
  static DistanceTable from_csv(std::string_view csv);

  std::vector<std::string> measures() const;
  double distance(const std::string& measure, const std::string& a, const std::string& b) const;
  Covariate covariate(const std::string& measure) const;

 private:
  std::map<std::string, std::map<std::pair<std::string, std::string>, double>> table_;
};

struct CorrelationResult {
  std::string measure;
  double rho = 0.0;
  double p_value = 1.0;
  std::size_t n_observations = 0;
  std::size_t n_permutations = 0;
  bool degenerate = false;
  std::vector<std::int64_t> excluded_rungs;
};

nlohmann::json to_json(const CorrelationResult& result);

/// Pairs every record with its covariate value and runs a Spearman
/// permutation test. With exclude_largest_rung the records at the largest
/// rung present are dropped first. Records lacking a covariate value are an
/// error.
CorrelationResult correlate(const std::vector<DtRecord>& records, const Covariate& covariate,
                            bool exclude_largest_rung, std::size_t n_permutations = 10000, std::uint64_t seed = 0);

/// D_T values keyed by direction, in one display unit.
struct DtEntry {
  std::string source;
  std::string target;
  double value = 0.0;
};

/// Table-2-shaped CSV: `source,<target>...` header, "-" for missing cells.
std::vector<DtEntry> read_dt_matrix(std::string_view csv);

struct CommutativityRow {
  std::string l1, l2;
  double forward = 0.0;  // l1 -> l2
  double reverse = 0.0;  // l2 -> l1
  double delta = 0.0;    // |forward - reverse|
};

struct CommutativityReport {
  std::string unit;
  std::vector<CommutativityRow> rows;
};

/// One row per unordered pair present in both directions, with l1 < l2.
CommutativityReport commutativity(const std::vector<DtEntry>& table, const std::string& unit = "");

std::string to_csv(const CommutativityReport& report, int digits = 2);
nlohmann::json to_json(const CommutativityReport& report);

}  // namespace xferlab::analysis
