#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace xferlab::transfer {

struct CurvePoint {
  std::int64_t size_bytes = 0;
  double perplexity = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

inline constexpr std::string_view kScratch = "scratch";

/// Perplexity against finetuning-set size for one target language. `init`
/// is "scratch" for randomly initialized runs, otherwise the source
/// language the model was pretrained on.
struct PerplexityCurve {
  std::string target;
  std::string init = std::string(kScratch);
  std::vector<CurvePoint> points;

  bool is_scratch() const { return init == kScratch; }
};

/// Throws InputError unless sizes are strictly increasing and perplexities
/// finite and positive.
void check_curve(const PerplexityCurve& curve);

struct PrunedCurve {
  PerplexityCurve curve;
  std::vector<CurvePoint> pruned;
};

/// Drops every point after the lowest-perplexity one (the curve turning
/// back up at large sizes). The kept prefix must be strictly decreasing in
/// perplexity and hold at least two points.
PrunedCurve prune_for_inversion(const PerplexityCurve& scratch);

struct EffectiveData {
  double bytes = 0.0;
  bool clamped = false;
};

/// Inverse piecewise-linear lookup on the scratch curve: the size at which a
/// scratch model reaches `perplexity`, linear in raw bytes. Queries outside
/// the curve's perplexity range return the nearest endpoint size, flagged.
EffectiveData interp_effective(double perplexity, const PerplexityCurve& scratch);

struct TransferRow {
  std::int64_t size_bytes = 0;      // finetuning-set size s
  double perplexity = 0.0;          // finetuned perplexity at s
  std::int64_t effective_bytes = 0; // scratch-equivalent size, rounded to a byte
  std::int64_t transfer_bytes = 0;  // effective_bytes - size_bytes
  bool clamped = false;

  bool negative() const { return transfer_bytes < 0; }
};

struct TransferEstimate {
  std::string source;
  std::string target;
  std::vector<TransferRow> rows;
  std::vector<CurvePoint> pruned_scratch_points;

  const TransferRow* at_size(std::int64_t size_bytes) const;
};

/// Data transfer for every point of the finetuned curve.
TransferEstimate data_transfer(const PerplexityCurve& scratch, const PerplexityCurve& finetuned);

enum class Unit { bytes, mb, mib };

Unit parse_unit(std::string_view name);
std::string_view unit_name(Unit unit);

/// bytes / 1e6 (MB) or bytes / 2^20 (MiB).
double convert_units(double bytes, Unit unit);

/// Two-decimal display string.
std::string format_units(double bytes, Unit unit);

// --- file formats ---------------------------------------------------------

/// `# target=<t>,init=<i>` then `size_bytes,perplexity` rows.
std::string curve_to_csv(const PerplexityCurve& curve);
PerplexityCurve curve_from_csv(std::string_view text);

nlohmann::json to_json(const TransferEstimate& estimate);
TransferEstimate estimate_from_json(const nlohmann::json& j);

/// Source x target grid of D_T at one finetuning size.
struct TransferMatrix {
  std::vector<std::string> sources;
  std::vector<std::string> targets;
  std::vector<std::vector<std::optional<std::int64_t>>> transfer_bytes;  // [source][target]
};

/// Grid over all estimates at `size_bytes`; row/column order is first
/// appearance.
TransferMatrix transfer_matrix(const std::vector<TransferEstimate>& estimates, std::int64_t size_bytes);

/// CSV with a `source` column then one column per target; "-" where absent.
std::string matrix_to_csv(const TransferMatrix& matrix, Unit unit);

}  // namespace xferlab::transfer
