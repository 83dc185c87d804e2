#include "xferlab/analysis/correlate.hpp"

#include <algorithm>
#include <cmath>

#include "xferlab/errors.hpp"
#include "xferlab/io.hpp"

namespace xferlab::analysis {

namespace {

std::vector<std::vector<std::string>> csv_rows(std::string_view csv, const std::string& header) {
  std::vector<std::vector<std::string>> rows;
  bool seen = false;
  for (auto& line : io::split_lines(csv)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!seen) {
      if (line != header) throw InputError("CSV header must be '" + header + "', got '" + line + "'");
      seen = true;
      continue;
    }
    rows.push_back(io::split_csv_line(line));
  }
  if (!seen) throw InputError("CSV is empty; expected header '" + header + "'");
  return rows;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError("bad number '" + s + "' in " + what);
  }
}

std::pair<std::string, std::string> ordered(const std::string& a, const std::string& b) {
  return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
}

}  // namespace

std::vector<DtRecord> read_dt_records(std::string_view jsonl) {
  std::vector<DtRecord> out;
  std::size_t line_no = 0;
  for (const auto& line : io::split_lines(jsonl)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("source").get<std::string>(), j.at("target").get<std::string>(),
                     j.at("rung_bytes").get<std::int64_t>(), j.at("dt_bytes").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw InputError("dt record line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string write_dt_records(const std::vector<DtRecord>& records) {
  std::string out;
  for (const auto& r : records)
    out += nlohmann::json{{"source", r.source}, {"target", r.target}, {"rung_bytes", r.rung_bytes}, {"dt_bytes", r.dt_bytes}}
               .dump() +
           "\n";
  return out;
}

std::optional<double> Covariate::at(const std::string& source, const std::string& target) const {
  auto it = values.find({source, target});
  if (it == values.end() && symmetric) it = values.find({target, source});
  if (it == values.end()) return std::nullopt;
  return it->second;
}

Covariate read_covariate_csv(std::string_view csv, const std::string& name) {
  Covariate c;
  c.name = name;
  for (const auto& f : csv_rows(csv, "source,target,value")) {
    if (f.size() != 3) throw InputError("covariate rows need 3 fields");
    if (!c.values.emplace(std::make_pair(f[0], f[1]), parse_double(f[2], "covariate " + name)).second)
      throw InputError("duplicate covariate row " + f[0] + "," + f[1]);
  }
  return c;
}

DistanceTable DistanceTable::from_csv(std::string_view csv) {
  DistanceTable t;
  std::vector<std::string> problems;
  for (const auto& f : csv_rows(csv, "measure,lang1,lang2,value")) {
    if (f.size() != 4) throw InputError("distance rows need 4 fields");
    const double v = parse_double(f[3], "distance table");
    const std::string where = f[0] + "(" + f[1] + "," + f[2] + ")";
    if (v < 0.0 || v > 1.0) problems.push_back(where + " = " + f[3] + " is outside [0, 1]");
    if (f[1] == f[2]) {
      if (v != 0.0) problems.push_back(where + " must be 0 on the diagonal");
      continue;
    }
    auto [it, fresh] = t.table_[f[0]].emplace(ordered(f[1], f[2]), v);
    if (!fresh && it->second != v) problems.push_back(where + " disagrees with its mirror entry");
  }
  if (!problems.empty()) throw ValidationError(std::move(problems));
  return t;
}

std::vector<std::string> DistanceTable::measures() const {
  std::vector<std::string> out;
  for (const auto& [m, _] : table_) out.push_back(m);
  return out;
}

double DistanceTable::distance(const std::string& measure, const std::string& a, const std::string& b) const {
  const auto m = table_.find(measure);
  if (m == table_.end()) throw InputError("distance table has no measure '" + measure + "'");
  if (a == b) return 0.0;
  const auto it = m->second.find(ordered(a, b));
  if (it == m->second.end()) throw InputError("no " + measure + " distance for " + a + "," + b);
  return it->second;
}

Covariate DistanceTable::covariate(const std::string& measure) const {
  const auto m = table_.find(measure);
  if (m == table_.end()) throw InputError("distance table has no measure '" + measure + "'");
  Covariate c;
  c.name = "distance(" + measure + ")";
  c.symmetric = true;
  for (const auto& [pair, v] : m->second) c.values[pair] = v;
  return c;
}

nlohmann::json to_json(const CorrelationResult& r) {
  return {{"measure", r.measure},
          {"rho", r.rho},
          {"p_value", r.p_value},
          {"n_observations", r.n_observations},
          {"n_permutations", r.n_permutations},
          {"degenerate", r.degenerate},
          {"excluded_rungs", r.excluded_rungs}};
}

CorrelationResult correlate(const std::vector<DtRecord>& records, const Covariate& covariate,
                            bool exclude_largest_rung, std::size_t n_permutations, std::uint64_t seed) {
  CorrelationResult out;
  out.measure = covariate.name;
  std::int64_t largest = 0;
  for (const auto& r : records) largest = std::max(largest, r.rung_bytes);
  if (exclude_largest_rung && !records.empty()) out.excluded_rungs.push_back(largest);

  std::vector<double> dt, cov;
  for (const auto& r : records) {
    if (exclude_largest_rung && r.rung_bytes == largest) continue;
    const auto v = covariate.at(r.source, r.target);
    if (!v) throw InputError("no " + covariate.name + " value for " + r.source + " -> " + r.target);
    dt.push_back(r.dt_bytes);
    cov.push_back(*v);
  }
  if (dt.size() < 3)
    throw PreconditionError("correlation needs at least 3 observations, have " + std::to_string(dt.size()));
  const auto test = permutation_test(dt, cov, n_permutations, seed);
  out.rho = test.rho;
  out.p_value = test.p_value;
  out.n_observations = dt.size();
  out.n_permutations = n_permutations;
  out.degenerate = test.degenerate;
  return out;
}

std::vector<DtEntry> read_dt_matrix(std::string_view csv) {
  std::vector<DtEntry> out;
  std::vector<std::string> targets;
  for (auto& line : io::split_lines(csv)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto f = io::split_csv_line(line);
    if (targets.empty()) {
      if (f.empty() || f[0] != "source") throw InputError("matrix CSV must start with a 'source' column");
      targets.assign(f.begin() + 1, f.end());
      if (targets.empty()) throw InputError("matrix CSV has no target columns");
      continue;
    }
    if (f.size() != targets.size() + 1) throw InputError("matrix row has wrong width: " + line);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const auto& cell = f[t + 1];
      if (cell == "-" || cell.empty()) continue;
      out.push_back({f[0], targets[t], parse_double(cell, "matrix cell " + f[0] + "," + targets[t])});
    }
  }
  return out;
}

CommutativityReport commutativity(const std::vector<DtEntry>& table, const std::string& unit) {
  std::map<std::pair<std::string, std::string>, double> dir;
  for (const auto& e : table) dir[{e.source, e.target}] = e.value;
  CommutativityReport out;
  out.unit = unit;
  for (const auto& [key, forward] : dir) {
    const auto& [a, b] = key;
    if (a >= b) continue;
    const auto rev = dir.find({b, a});
    if (rev == dir.end()) continue;
    out.rows.push_back({a, b, forward, rev->second, std::abs(forward - rev->second)});
  }
  if (out.rows.empty()) throw PreconditionError("no language pair has D_T in both directions");
  return out;
}

std::string to_csv(const CommutativityReport& r, int digits) {
  std::string out = "l1,l2,forward,reverse,delta\n";
  for (const auto& row : r.rows)
    out += row.l1 + "," + row.l2 + "," + io::fixed(row.forward, digits) + "," + io::fixed(row.reverse, digits) + "," +
           io::fixed(row.delta, digits) + "\n";
  return out;
}

nlohmann::json to_json(const CommutativityReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"l1", row.l1}, {"l2", row.l2}, {"forward", row.forward}, {"reverse", row.reverse}, {"delta", row.delta}});
  return {{"unit", r.unit}, {"rows", rows}};
}

}  // namespace xferlab::analysis
