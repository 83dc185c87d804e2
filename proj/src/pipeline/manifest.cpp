#include "xferlab/pipeline/manifest.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "xferlab/analysis/correlate.hpp"
#include "xferlab/analysis/langid.hpp"
#include "xferlab/errors.hpp"
#include "xferlab/io.hpp"
#include "xferlab/rng.hpp"
#include "xferlab/transfer/transfer.hpp"

namespace xferlab::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Problems {
 public:
  explicit Problems(std::vector<std::string>& out) : out_(out) {}
  void add(const std::string& path, const std::string& message) { out_.push_back(path + ": " + message); }
  std::size_t size() const { return out_.size(); }

  // Runs f, turning any parse or input exception into a problem at `path`.
  template <typename F>
  bool guard(const std::string& path, F&& f) {
    try {
      f();
      return true;
    } catch (const ValidationError& e) {
      for (const auto& p : e.problems()) add(path, p);
    } catch (const json::exception& e) {
      add(path, e.what());
    } catch (const std::exception& e) {
      add(path, e.what());
    }
    return false;
  }

 private:
  std::vector<std::string>& out_;
};

void reject_unknown(const json& j, const std::vector<std::string>& known, const std::string& path, Problems& p) {
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      p.add(path.empty() ? key : path + "." + key, "unknown field");
}

bool valid_tag(const std::string& s) {
  if (s.empty() || s == transfer::kScratch || s.find("__") != std::string::npos) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
           c == '.';
  });
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

// Replaces string "parent" references with the named entry's spec, recursively.
json resolve_parents(json spec, const std::map<std::string, json>& named, int depth) {
  if (depth > 16) throw InputError("parent chain is too deep or cyclic");
  if (!spec.is_object() || !spec.contains("parent")) return spec;
  auto& parent = spec["parent"];
  if (parent.is_string()) {
    const auto it = named.find(parent.get<std::string>());
    if (it == named.end())
      throw InputError("parent '" + parent.get<std::string>() + "' is not a synthetic language in this manifest");
    parent = resolve_parents(it->second, named, depth + 1);
  } else if (parent.is_object()) {
    parent = resolve_parents(parent, named, depth + 1);
  }
  return spec;
}

std::uint64_t stream(const std::string& label) { return io::fnv1a(label); }

}  // namespace

corpus::Corpus materialize(const LanguageEntry& e, std::uint64_t seed) {
  const auto s = derive_seed(seed, stream("corpus:" + e.language));
  if (e.synthetic) {
    auto c = corpus::gen_synthetic(*e.synthetic, e.bytes, s);
    c.language = e.language;
    return c;
  }
  auto c = corpus::load_corpus(*e.corpus_path, e.language);
  if (e.bytes > 0) {
    if (e.bytes > c.total_bytes())
      throw PreconditionError("corpus for " + e.language + " has " + std::to_string(c.total_bytes()) +
                              " bytes, fewer than the requested " + std::to_string(e.bytes));
    c = corpus::sample_budget(c, e.bytes, s);
  }
  return c;
}

TargetSplit split_target(const corpus::Corpus& c, const LanguageEntry& e, std::uint64_t seed) {
  if (e.test_bytes >= c.total_bytes())
    throw PreconditionError("test_bytes for " + e.language + " leaves no finetuning pool");
  auto h = corpus::split_holdout(c, e.test_bytes, derive_seed(seed, stream("test:" + e.language)));
  return {std::move(h.heldout), std::move(h.remainder)};
}

ManifestCheck check_manifest(const json& j, const fs::path& base_dir) {
  ManifestCheck out;
  Manifest& m = out.manifest;
  Problems p(out.errors);
  const fs::path base = fs::absolute(base_dir);

  if (!j.is_object()) {
    p.add("manifest", "must be a JSON object");
    return out;
  }
  reject_unknown(j,
                 {"version", "name", "seed", "output_dir", "model", "training", "sources", "targets", "ladder",
                  "analysis", "imported_curves"},
                 "", p);

  p.guard("version", [&] {
    m.version = j.value("version", kManifestVersion);
    if (m.version != kManifestVersion) throw InputError("unsupported version " + std::to_string(m.version));
  });
  p.guard("name", [&] { m.name = j.value("name", std::string()); });
  if (!j.contains("seed")) p.add("seed", "is required");
  else p.guard("seed", [&] {
    if (!j.at("seed").is_number_integer() || j.at("seed").get<std::int64_t>() < 0)
      throw InputError("must be a non-negative integer");
    m.seed = j.at("seed").get<std::uint64_t>();
  });
  if (!j.contains("output_dir")) p.add("output_dir", "is required");
  else p.guard("output_dir", [&] {
    const auto dir = j.at("output_dir").get<std::string>();
    if (dir.empty()) throw InputError("must not be empty");
    m.output_dir = resolve(base, dir);
  });

  bool model_ok = p.guard("model", [&] {
    m.model = j.contains("model") ? j.at("model").get<bytelm::ModelConfig>() : bytelm::desk_preset();
    bytelm::require_valid(m.model);
  });

  if (j.contains("imported_curves")) p.guard("imported_curves", [&] {
    const auto dir = resolve(base, j.at("imported_curves").get<std::string>());
    if (!fs::is_directory(dir)) throw InputError("directory " + dir.string() + " does not exist");
    m.imported_curves = dir;
  });
  const bool analysis_only = j.contains("imported_curves");

  const json training = j.value("training", json::object());
  if (!training.is_object()) p.add("training", "must be an object");
  else reject_unknown(training, {"pretrain", "finetune"}, "training", p);
  auto train_section = [&](const char* key, training::TrainConfig preset, training::Phase phase,
                           training::TrainConfig& cfg) {
    const std::string path = std::string("training.") + key;
    p.guard(path, [&] {
      cfg = preset;
      const bool given = training.is_object() && training.contains(key);
      // Imported curves need no training; only check what was written.
      if (analysis_only && !given) return;
      if (given) {
        const auto& s = training.at(key);
        if (s.is_object() && s.contains("seed")) throw InputError("seed: stage seeds derive from the top-level seed");
        if (s.is_object() && s.contains("phase")) throw InputError("phase: fixed by the section");
        cfg = s.get<training::TrainConfig>();
      }
      cfg.phase = phase;
      if (auto v = training::validate(cfg); !v.empty()) throw ValidationError(std::move(v));
      if (model_ok && cfg.seq_len > m.model.seq_len)
        throw InputError("seq_len " + std::to_string(cfg.seq_len) + " exceeds the model context " +
                         std::to_string(m.model.seq_len));
    });
  };
  train_section("pretrain", training::pretrain_preset(), training::Phase::pretrain, m.pretrain);
  train_section("finetune", training::finetune_preset(), training::Phase::finetune, m.finetune);

  // Ladder.
  if (j.contains("ladder")) {
    p.guard("ladder", [&] {
      const auto& l = j.at("ladder");
      if (!l.is_array() || l.empty()) throw InputError("must be a non-empty array of byte counts");
      for (std::size_t i = 0; i < l.size(); ++i) {
        const std::string path = "ladder[" + std::to_string(i) + "]";
        if (!l[i].is_number_integer() || l[i].get<std::int64_t>() <= 0) {
          p.add(path, "must be a positive integer");
          continue;
        }
        const auto v = l[i].get<std::int64_t>();
        if (!m.ladder.empty() && v <= m.ladder.back()) p.add(path, "rungs must be strictly increasing");
        m.ladder.push_back(v);
      }
      if (l.size() < 2) throw InputError("needs at least 2 rungs so the scratch curve can be inverted");
    });
  } else if (!analysis_only) {
    p.add("ladder", "is required");
  }

  // Languages.
  std::map<std::string, json> synthetic_by_name;
  for (const char* list : {"targets", "sources"})
    if (j.contains(list) && j.at(list).is_array())
      for (const auto& e : j.at(list))
        if (e.is_object() && e.contains("language") && e.at("language").is_string() && e.contains("synthetic"))
          synthetic_by_name.emplace(e.at("language").get<std::string>(), e.at("synthetic"));

  auto parse_entries = [&](const char* list, bool is_target, std::vector<LanguageEntry>& entries) {
    if (!j.contains(list)) {
      if (!analysis_only) p.add(list, "is required");
      return;
    }
    const auto& arr = j.at(list);
    if (!arr.is_array() || (arr.empty() && !analysis_only)) {
      p.add(list, "must be a non-empty array");
      return;
    }
    std::set<std::string> seen;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string path = std::string(list) + "[" + std::to_string(i) + "]";
      const auto& e = arr[i];
      if (!e.is_object()) {
        p.add(path, "must be an object");
        continue;
      }
      const std::size_t before = p.size();
      reject_unknown(e, is_target ? std::vector<std::string>{"language", "corpus", "synthetic", "bytes", "test_bytes"}
                                  : std::vector<std::string>{"language", "corpus", "synthetic", "bytes"},
                     path, p);
      LanguageEntry entry;
      p.guard(path + ".language", [&] {
        entry.language = e.at("language").get<std::string>();
        if (!valid_tag(entry.language))
          throw InputError("'" + entry.language + "' must use [A-Za-z0-9._-], not contain '__', and not be 'scratch'");
        if (!seen.insert(entry.language).second) throw InputError("duplicate language '" + entry.language + "'");
      });
      p.guard(path + ".bytes", [&] {
        if (!e.contains("bytes")) return;
        if (!e.at("bytes").is_number_integer() || e.at("bytes").get<std::int64_t>() < 0) throw InputError("must be a non-negative integer");
        entry.bytes = e.at("bytes").get<std::size_t>();
      });
      if (is_target) {
        if (!e.contains("test_bytes")) p.add(path + ".test_bytes", "is required for targets");
        else p.guard(path + ".test_bytes", [&] {
          if (!e.at("test_bytes").is_number_integer() || e.at("test_bytes").get<std::int64_t>() <= 0)
            throw InputError("must be a positive integer");
          entry.test_bytes = e.at("test_bytes").get<std::size_t>();
        });
      }
      entry.section = e;
      if (e.contains("corpus") == e.contains("synthetic")) {
        p.add(path, "give exactly one of 'corpus' or 'synthetic'");
      } else if (e.contains("corpus")) {
        p.guard(path + ".corpus", [&] {
          const auto file = resolve(base, e.at("corpus").get<std::string>());
          if (!fs::is_regular_file(file)) throw InputError("file " + file.string() + " does not exist");
          entry.corpus_path = file;
          entry.section["corpus"] = file.string();
        });
      } else {
        p.guard(path + ".synthetic", [&] {
          auto spec_json = resolve_parents(e.at("synthetic"), synthetic_by_name, 0);
          spec_json["language"] = entry.language;
          auto spec = spec_json.get<corpus::SyntheticLangSpec>();
          if (auto v = corpus::validate(spec); !v.empty()) throw ValidationError(std::move(v));
          entry.synthetic = std::move(spec);
          entry.section["synthetic"] = spec_json;
        });
        if (entry.bytes == 0) p.add(path + ".bytes", "must be > 0 for a synthetic language");
      }
      if (p.size() == before) entries.push_back(std::move(entry));
    }
  };
  parse_entries("targets", true, m.targets);
  parse_entries("sources", false, m.sources);

  // Every rung must fit in every target's finetuning pool.
  if (!analysis_only)
    for (std::size_t t = 0; t < m.targets.size(); ++t) {
      const auto& e = m.targets[t];
      std::size_t pool = 0;
      if (!p.guard("targets[" + std::to_string(t) + "]", [&] {
            pool = split_target(materialize(e, m.seed), e, m.seed).pool.total_bytes();
          }))
        continue;
      for (std::size_t i = 0; i < m.ladder.size(); ++i)
        if (static_cast<std::size_t>(m.ladder[i]) > pool)
          p.add("ladder[" + std::to_string(i) + "]", "rung " + std::to_string(m.ladder[i]) + " exceeds the " +
                                                         std::to_string(pool) + "-byte finetuning pool of target '" +
                                                         e.language + "'");
    }

  // Analysis options.
  const json analysis = j.value("analysis", json::object());
  if (!analysis.is_object()) {
    p.add("analysis", "must be an object");
  } else {
    reject_unknown(analysis,
                   {"contamination", "threshold", "langid_bytes", "permutations", "exclude_largest_rung",
                    "distance_table", "unit"},
                   "analysis", p);
    auto& a = m.analysis;
    if (analysis_only) a.contamination = false;
    p.guard("analysis.contamination", [&] {
      a.contamination = analysis.value("contamination", a.contamination);
      if (a.contamination && analysis_only) throw InputError("needs corpora, which analysis-only runs do not have");
    });
    p.guard("analysis.threshold", [&] {
      a.threshold = analysis.value("threshold", a.threshold);
      if (!(a.threshold >= 0.0)) throw InputError("must be >= 0");
    });
    p.guard("analysis.langid_bytes", [&] {
      a.langid_bytes = analysis.value("langid_bytes", a.langid_bytes);
      if (a.langid_bytes < analysis::kMinLangidBytes)
        throw InputError("must be at least " + std::to_string(analysis::kMinLangidBytes));
    });
    p.guard("analysis.permutations", [&] {
      a.permutations = analysis.value("permutations", a.permutations);
      if (a.permutations < 1) throw InputError("must be >= 1");
    });
    p.guard("analysis.exclude_largest_rung",
            [&] { a.exclude_largest_rung = analysis.value("exclude_largest_rung", a.exclude_largest_rung); });
    p.guard("analysis.unit", [&] {
      a.unit = analysis.value("unit", a.unit);
      a.unit = std::string(transfer::unit_name(transfer::parse_unit(a.unit)));
    });
    if (analysis.contains("distance_table")) p.guard("analysis.distance_table", [&] {
      const auto file = resolve(base, analysis.at("distance_table").get<std::string>());
      if (!fs::is_regular_file(file)) throw InputError("file " + file.string() + " does not exist");
      analysis::DistanceTable::from_csv(io::read_file(file));
      a.distance_table = file;
    });
  }

  if (!out.errors.empty()) return out;

  // Self-contained snapshot: absolute input paths, output beside itself.
  json snap = {{"version", m.version}, {"name", m.name}, {"seed", m.seed}, {"output_dir", "."}, {"model", m.model}};
  auto train_json = [](const training::TrainConfig& c) {
    json t = c;
    t.erase("seed");
    t.erase("phase");
    return t;
  };
  snap["training"] = {{"pretrain", train_json(m.pretrain)}, {"finetune", train_json(m.finetune)}};
  if (!m.ladder.empty()) snap["ladder"] = m.ladder;
  for (const auto* list : {&m.sources, &m.targets}) {
    json arr = json::array();
    for (const auto& e : *list) arr.push_back(e.section);
    snap[list == &m.sources ? "sources" : "targets"] = arr;
  }
  json a = {{"contamination", m.analysis.contamination},
            {"threshold", m.analysis.threshold},
            {"langid_bytes", m.analysis.langid_bytes},
            {"permutations", m.analysis.permutations},
            {"exclude_largest_rung", m.analysis.exclude_largest_rung},
            {"unit", m.analysis.unit}};
  if (m.analysis.distance_table) a["distance_table"] = m.analysis.distance_table->string();
  snap["analysis"] = a;
  if (m.imported_curves) snap["imported_curves"] = m.imported_curves->string();
  m.snapshot = std::move(snap);
  return out;
}

Manifest load_manifest(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError({"manifest: invalid JSON: " + std::string(e.what())});
  } catch (const std::exception& e) {
    throw ValidationError({"manifest: " + std::string(e.what())});
  }
  auto check = check_manifest(j, fs::absolute(path).parent_path());
  if (!check.errors.empty()) throw ValidationError(std::move(check.errors));
  return std::move(check.manifest);
}

}  // namespace xferlab::pipeline
