#include "xferlab/transfer/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "xferlab/errors.hpp"
#include "xferlab/io.hpp"

namespace xferlab::transfer {

void check_curve(const PerplexityCurve& curve) {
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    const auto& p = curve.points[i];
    if (!std::isfinite(p.perplexity) || p.perplexity <= 0.0)
      throw InputError("curve " + curve.target + "/" + curve.init + ": perplexity at " +
                       std::to_string(p.size_bytes) + " bytes must be finite and positive");
    if (p.size_bytes < 0) throw InputError("curve sizes must be non-negative");
    if (i > 0 && p.size_bytes <= curve.points[i - 1].size_bytes)
      throw InputError("curve " + curve.target + "/" + curve.init + ": sizes must be strictly increasing");
  }
}

PrunedCurve prune_for_inversion(const PerplexityCurve& scratch) {
  check_curve(scratch);
  if (scratch.points.size() < 2) throw PreconditionError("scratch curve needs at least 2 points");
  const auto best = std::min_element(scratch.points.begin(), scratch.points.end(),
                                     [](const CurvePoint& a, const CurvePoint& b) { return a.perplexity < b.perplexity; });
  PrunedCurve out;
  out.curve = scratch;
  const auto keep = static_cast<std::size_t>(best - scratch.points.begin()) + 1;
  out.pruned.assign(scratch.points.begin() + static_cast<std::ptrdiff_t>(keep), scratch.points.end());
  out.curve.points.resize(keep);
  if (out.curve.points.size() < 2)
    throw PreconditionError("scratch curve " + scratch.target + " has fewer than 2 usable points after pruning");
  for (std::size_t i = 1; i < out.curve.points.size(); ++i)
    if (!(out.curve.points[i].perplexity < out.curve.points[i - 1].perplexity))
      throw PreconditionError("scratch curve " + scratch.target + " is not monotone at " +
                              std::to_string(out.curve.points[i].size_bytes) + " bytes");
  return out;
}

EffectiveData interp_effective(double perplexity, const PerplexityCurve& scratch) {
  if (!std::isfinite(perplexity) || perplexity <= 0.0) throw InputError("query perplexity must be finite and positive");
  const auto& pts = prune_for_inversion(scratch).curve.points;
  // Perplexity falls as size grows, so walk the curve from the large end to
  // get ascending perplexities.
  const std::size_t n = pts.size();
  auto xp = [&](std::size_t i) { return pts[n - 1 - i].perplexity; };
  auto fp = [&](std::size_t i) { return static_cast<double>(pts[n - 1 - i].size_bytes); };

  if (perplexity < xp(0)) return {fp(0), true};
  if (perplexity > xp(n - 1)) return {fp(n - 1), true};
  if (perplexity == xp(n - 1)) return {fp(n - 1), false};
  std::size_t j = 0;
  while (j + 1 < n && xp(j + 1) <= perplexity) ++j;
  const double slope = (fp(j + 1) - fp(j)) / (xp(j + 1) - xp(j));
  return {fp(j) + (perplexity - xp(j)) * slope, false};
}

const TransferRow* TransferEstimate::at_size(std::int64_t size_bytes) const {
  for (const auto& r : rows)
    if (r.size_bytes == size_bytes) return &r;
  return nullptr;
}

TransferEstimate data_transfer(const PerplexityCurve& scratch, const PerplexityCurve& finetuned) {
  check_curve(finetuned);
  if (!scratch.is_scratch()) throw PreconditionError("first curve must be a scratch curve");
  if (scratch.target != finetuned.target)
    throw PreconditionError("curves target different languages: " + scratch.target + " vs " + finetuned.target);
  const auto pruned = prune_for_inversion(scratch);
  TransferEstimate out;
  out.source = finetuned.init;
  out.target = finetuned.target;
  out.pruned_scratch_points = pruned.pruned;
  for (const auto& p : finetuned.points) {
    const auto eff = interp_effective(p.perplexity, pruned.curve);
    TransferRow row;
    row.size_bytes = p.size_bytes;
    row.perplexity = p.perplexity;
    row.effective_bytes = std::llround(eff.bytes);
    row.transfer_bytes = row.effective_bytes - row.size_bytes;
    row.clamped = eff.clamped;
    out.rows.push_back(row);
  }
  return out;
}

Unit parse_unit(std::string_view name) {
  if (name == "bytes" || name == "B") return Unit::bytes;
  if (name == "MB") return Unit::mb;
  if (name == "MiB") return Unit::mib;
  throw InputError("unknown unit '" + std::string(name) + "' (expected bytes, MB or MiB)");
}

std::string_view unit_name(Unit unit) {
  switch (unit) {
    case Unit::bytes: return "bytes";
    case Unit::mb: return "MB";
    case Unit::mib: return "MiB";
  }
  return "?";
}

double convert_units(double bytes, Unit unit) {
  switch (unit) {
    case Unit::bytes: return bytes;
    case Unit::mb: return bytes / 1e6;
    case Unit::mib: return bytes / 1048576.0;
  }
  throw InputError("unknown unit");
}

std::string format_units(double bytes, Unit unit) {
  if (unit == Unit::bytes) return std::to_string(std::llround(bytes));
  return io::fixed(convert_units(bytes, unit), 2);
}

std::string curve_to_csv(const PerplexityCurve& curve) {
  std::string out = "# target=" + curve.target + ",init=" + curve.init + "\nsize_bytes,perplexity\n";
  for (const auto& p : curve.points) out += std::to_string(p.size_bytes) + "," + io::exact(p.perplexity) + "\n";
  return out;
}

PerplexityCurve curve_from_csv(std::string_view text) {
  PerplexityCurve curve;
  curve.init.clear();
  bool header_seen = false;
  for (auto& line : io::split_lines(text)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      for (const auto& field : io::split_csv_line(std::string_view(line).substr(1))) {
        auto kv = field;
        kv.erase(0, kv.find_first_not_of(' '));
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const auto key = kv.substr(0, eq), value = kv.substr(eq + 1);
        if (key == "target") curve.target = value;
        if (key == "init") curve.init = value;
      }
      continue;
    }
    if (!header_seen) {
      if (line != "size_bytes,perplexity") throw InputError("curve CSV must start with size_bytes,perplexity");
      header_seen = true;
      continue;
    }
    const auto fields = io::split_csv_line(line);
    if (fields.size() != 2) throw InputError("curve CSV row must have 2 fields: " + line);
    try {
      curve.points.push_back({std::stoll(fields[0]), std::stod(fields[1])});
    } catch (const std::exception&) {
      throw InputError("bad curve CSV row: " + line);
    }
  }
  if (curve.target.empty() || curve.init.empty()) throw InputError("curve CSV lacks '# target=...,init=...' header");
  check_curve(curve);
  return curve;
}

nlohmann::json to_json(const TransferEstimate& e) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : e.rows)
    rows.push_back({{"size_bytes", r.size_bytes},
                    {"perplexity", r.perplexity},
                    {"effective_bytes", r.effective_bytes},
                    {"transfer_bytes", r.transfer_bytes},
                    {"transfer_mb", convert_units(static_cast<double>(r.transfer_bytes), Unit::mb)},
                    {"transfer_mib", convert_units(static_cast<double>(r.transfer_bytes), Unit::mib)},
                    {"clamped", r.clamped},
                    {"negative", r.negative()}});
  nlohmann::json pruned = nlohmann::json::array();
  for (const auto& p : e.pruned_scratch_points) pruned.push_back({{"size_bytes", p.size_bytes}, {"perplexity", p.perplexity}});
  return {{"source", e.source}, {"target", e.target}, {"rows", rows}, {"pruned_scratch_points", pruned}};
}

TransferEstimate estimate_from_json(const nlohmann::json& j) {
  TransferEstimate e;
  e.source = j.at("source").get<std::string>();
  e.target = j.at("target").get<std::string>();
  for (const auto& r : j.at("rows")) {
    TransferRow row;
    row.size_bytes = r.at("size_bytes").get<std::int64_t>();
    row.perplexity = r.at("perplexity").get<double>();
    row.effective_bytes = r.at("effective_bytes").get<std::int64_t>();
    row.transfer_bytes = r.at("transfer_bytes").get<std::int64_t>();
    row.clamped = r.at("clamped").get<bool>();
    e.rows.push_back(row);
  }
  if (j.contains("pruned_scratch_points"))
    for (const auto& p : j.at("pruned_scratch_points"))
      e.pruned_scratch_points.push_back({p.at("size_bytes").get<std::int64_t>(), p.at("perplexity").get<double>()});
  return e;
}

TransferMatrix transfer_matrix(const std::vector<TransferEstimate>& estimates, std::int64_t size_bytes) {
  TransferMatrix m;
  auto index_of = [](std::vector<std::string>& names, const std::string& name) {
    auto it = std::find(names.begin(), names.end(), name);
    if (it != names.end()) return static_cast<std::size_t>(it - names.begin());
    names.push_back(name);
    return names.size() - 1;
  };
  std::vector<std::tuple<std::size_t, std::size_t, std::int64_t>> cells;
  for (const auto& e : estimates) {
    const auto* row = e.at_size(size_bytes);
    if (!row) continue;
    cells.emplace_back(index_of(m.sources, e.source), index_of(m.targets, e.target), row->transfer_bytes);
  }
  m.transfer_bytes.assign(m.sources.size(), std::vector<std::optional<std::int64_t>>(m.targets.size()));
  for (auto [s, t, v] : cells) m.transfer_bytes[s][t] = v;
  return m;
}

std::string matrix_to_csv(const TransferMatrix& m, Unit unit) {
  std::string out = "source";
  for (const auto& t : m.targets) out += "," + t;
  out += "\n";
  for (std::size_t s = 0; s < m.sources.size(); ++s) {
    out += m.sources[s];
    for (std::size_t t = 0; t < m.targets.size(); ++t) {
      const auto& v = m.transfer_bytes[s][t];
      out += "," + (v ? format_units(static_cast<double>(*v), unit) : std::string("-"));
    }
    out += "\n";
  }
  return out;
}

}  // namespace xferlab::transfer
