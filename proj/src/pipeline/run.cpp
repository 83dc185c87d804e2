#include "xferlab/pipeline/run.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "xferlab/analysis/correlate.hpp"
#include "xferlab/analysis/langid.hpp"
#include "xferlab/analysis/stats.hpp"
#include "xferlab/bytelm/checkpoint.hpp"
#include "xferlab/errors.hpp"
#include "xferlab/io.hpp"
#include "xferlab/rng.hpp"
#include "xferlab/training/trainer.hpp"

namespace xferlab::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(StageStatus s) {
  switch (s) {
    case StageStatus::computed: return "computed";
    case StageStatus::skipped: return "skipped";
    case StageStatus::failed: return "failed";
  }
  return "?";
}

bool RunSummary::ok() const { return count(StageStatus::failed) == 0; }

std::size_t RunSummary::count(StageStatus status) const {
  return static_cast<std::size_t>(
      std::count_if(stages.begin(), stages.end(), [&](const StageOutcome& o) { return o.status == status; }));
}

json RunSummary::to_json() const {
  json st = json::array();
  for (const auto& s : stages) {
    json o = {{"stage", s.name}, {"status", pipeline::to_string(s.status)}};
    if (!s.detail.empty()) o["detail"] = s.detail;
    st.push_back(o);
  }
  return {{"manifest_hash", manifest_hash}, {"stages", st}};
}

namespace {

std::string hash_of(const json& j) { return io::hex64(io::fnv1a(j.dump())); }

std::string curve_name(const std::string& target, const std::string& init) { return target + "__" + init; }

class Stages {
 public:
  Stages(RunSummary& summary, const RunOptions& options) : summary_(summary), options_(options) {}

  bool fresh(const fs::path& artifact, const std::string& key) const {
    const fs::path sidecar = artifact.string() + ".key";
    return fs::exists(artifact) && fs::exists(sidecar) && io::read_file(sidecar) == key;
  }

  void seal(const fs::path& artifact, const std::string& key) const {
    io::write_file_atomic(artifact.string() + ".key", key);
  }

  // Runs `body` unless every artifact is fresh. Returns false on failure or
  // when a dependency failed.
  template <typename F>
  bool stage(const std::string& name, const std::vector<std::string>& deps, const std::vector<fs::path>& artifacts,
             const std::string& key, F&& body) {
    for (const auto& d : deps)
      if (failed_.count(d)) return record(name, StageStatus::failed, "dependency " + d + " failed");
    const bool up_to_date = std::all_of(artifacts.begin(), artifacts.end(), [&](const fs::path& a) { return fresh(a, key); });
    if (up_to_date) return record(name, StageStatus::skipped, "");
    say(name + ": running");
    try {
      body();
      for (const auto& a : artifacts) seal(a, key);
    } catch (const std::exception& e) {
      return record(name, StageStatus::failed, e.what());
    }
    return record(name, StageStatus::computed, "");
  }

  void say(const std::string& line) const {
    if (options_.log) *options_.log << line << std::endl;
  }

  bool failed(const std::string& name) const { return failed_.count(name) > 0; }

  training::ProgressFn progress(const std::string& name) const {
    if (!options_.verbose || !options_.log) return {};
    return [this, name](const training::LogRow& r) {
      if (r.dev_ppl) say(name + " step " + std::to_string(r.step) + " loss " + io::fixed(r.loss, 4) + " dev_ppl " +
                         io::fixed(*r.dev_ppl, 4));
    };
  }

 private:
  bool record(const std::string& name, StageStatus status, const std::string& detail) {
    summary_.stages.push_back({name, status, detail});
    if (status == StageStatus::failed) failed_.insert(name);
    say(name + ": " + to_string(status) + (detail.empty() ? "" : " (" + detail + ")"));
    return status != StageStatus::failed;
  }

  RunSummary& summary_;
  const RunOptions& options_;
  std::set<std::string> failed_;
};

struct TargetData {
  corpus::Corpus pool;
  corpus::Corpus test;
};

std::vector<transfer::PerplexityCurve> load_curves(const fs::path& dir) {
  std::vector<transfer::PerplexityCurve> out;
  if (!fs::is_directory(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& f : fs::directory_iterator(dir))
    if (f.path().extension() == ".csv") files.push_back(f.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out.push_back(transfer::curve_from_csv(io::read_file(f)));
  return out;
}

}  // namespace

RunSummary run(const Manifest& m, const RunOptions& options) {
  RunSummary summary;
  Stages st(summary, options);
  const fs::path root = m.output_dir;
  for (const char* sub : {"corpora/source", "corpora/target", "checkpoints", "curves", "runs", "transfer", "analysis",
                          "reports"})
    fs::create_directories(root / sub);
  const std::string snapshot = m.snapshot.dump(2) + "\n";
  io::write_file_atomic(root / "manifest.json", snapshot);
  summary.manifest_hash = io::hex64(io::fnv1a(snapshot));

  const json model_json = m.model;
  std::map<std::string, std::string> source_key, target_key, pretrain_key;
  std::map<std::string, corpus::Corpus> source_corpus;
  std::map<std::string, TargetData> target_data;

  auto source_file = [&](const std::string& lang) { return root / "corpora/source" / (lang + ".jsonl"); };
  auto target_files = [&](const std::string& lang) {
    return std::make_pair(root / "corpora/target" / (lang + ".pool.jsonl"),
                          root / "corpora/target" / (lang + ".test.jsonl"));
  };
  auto load_source = [&](const std::string& lang) -> const corpus::Corpus& {
    auto it = source_corpus.find(lang);
    if (it == source_corpus.end()) it = source_corpus.emplace(lang, corpus::load_corpus(source_file(lang), lang)).first;
    return it->second;
  };
  auto load_target = [&](const std::string& lang) -> const TargetData& {
    auto it = target_data.find(lang);
    if (it == target_data.end()) {
      const auto [pool, test] = target_files(lang);
      it = target_data.emplace(lang, TargetData{corpus::load_corpus(pool, lang), corpus::load_corpus(test, lang)}).first;
    }
    return it->second;
  };

  std::vector<transfer::PerplexityCurve> curves;

  if (m.analysis_only()) {
    // Imported curves stand in for every training stage.
    for (const auto& curve : load_curves(*m.imported_curves)) {
      const auto name = curve_name(curve.target, curve.init);
      const auto file = root / "curves" / (name + ".csv");
      const auto csv = transfer::curve_to_csv(curve);
      st.stage("import:" + name, {}, {file}, hash_of({{"stage", "import"}, {"csv", csv}}),
               [&] { io::write_file_atomic(file, csv); });
      curves.push_back(curve);
    }
  } else {
    for (const auto& e : m.sources) {
      const auto key = hash_of({{"stage", "corpus"}, {"entry", e.section}, {"seed", m.seed}});
      source_key[e.language] = key;
      st.stage("corpus:source:" + e.language, {}, {source_file(e.language)}, key, [&] {
        auto c = materialize(e, m.seed);
        corpus::save_jsonl(c, source_file(e.language), {{"language", e.language}, {"bytes", c.total_bytes()}});
        source_corpus[e.language] = std::move(c);
      });
    }
    for (const auto& e : m.targets) {
      const auto key = hash_of({{"stage", "corpus"}, {"entry", e.section}, {"seed", m.seed}});
      target_key[e.language] = key;
      const auto [pool_file, test_file] = target_files(e.language);
      st.stage("corpus:target:" + e.language, {}, {pool_file, test_file}, key, [&] {
        auto split = split_target(materialize(e, m.seed), e, m.seed);
        corpus::save_jsonl(split.pool, pool_file, {{"language", e.language}, {"split", "pool"}});
        corpus::save_jsonl(split.test, test_file, {{"language", e.language}, {"split", "test"}});
        target_data[e.language] = {std::move(split.pool), std::move(split.test)};
      });
    }

    for (const auto& e : m.sources) {
      const auto& lang = e.language;
      auto cfg = m.pretrain;
      cfg.seed = derive_seed(m.seed, io::fnv1a("pretrain:" + lang));
      const auto key = hash_of({{"stage", "pretrain"}, {"corpus", source_key[lang]}, {"model", model_json}, {"config", cfg}});
      pretrain_key[lang] = key;
      const auto dir = root / "checkpoints" / lang;
      st.stage("pretrain:" + lang, {"corpus:source:" + lang}, {dir / "checkpoint.bin"}, key, [&] {
        training::pretrain(m.model, cfg, load_source(lang), dir, st.progress("pretrain:" + lang));
      });
    }

    for (const auto& t : m.targets) {
      auto cfg = m.finetune;
      // Shared by every init, so all ladders for a target see the same rung samples.
      cfg.seed = derive_seed(m.seed, io::fnv1a("ladder:" + t.language));
      std::vector<std::string> inits = {std::string(transfer::kScratch)};
      for (const auto& s : m.sources)
        if (s.language != t.language) inits.push_back(s.language);
      for (const auto& init : inits) {
        const bool scratch = init == transfer::kScratch;
        const auto name = curve_name(t.language, init);
        const auto file = root / "curves" / (name + ".csv");
        const auto key = hash_of({{"stage", "ladder"},
                                  {"target", target_key[t.language]},
                                  {"init", scratch ? std::string(transfer::kScratch) : pretrain_key[init]},
                                  {"model", model_json},
                                  {"config", cfg},
                                  {"ladder", m.ladder}});
        std::vector<std::string> deps = {"corpus:target:" + t.language};
        if (!scratch) deps.push_back("pretrain:" + init);
        const bool ok = st.stage("ladder:" + name, deps, {file}, key, [&] {
          std::optional<bytelm::Parameters<float>> start;
          if (!scratch) start = bytelm::load_checkpoint(root / "checkpoints" / init / "checkpoint.bin");
          const auto& data = load_target(t.language);
          const auto dir = root / "runs" / name;
          fs::remove_all(dir);
          auto result = training::finetune(start, init, m.model, m.ladder, data.pool, data.test, cfg, dir,
                                           st.progress("ladder:" + name));
          io::write_file_atomic(file, transfer::curve_to_csv(result.curve));
        });
        if (ok) curves.push_back(transfer::curve_from_csv(io::read_file(file)));
      }
    }
  }

  // Transfer estimates for every (source, target) with both curves.
  std::map<std::string, const transfer::PerplexityCurve*> scratch_of;
  for (const auto& c : curves)
    if (c.is_scratch()) scratch_of[c.target] = &c;
  std::vector<transfer::TransferEstimate> estimates;
  for (const auto& c : curves) {
    if (c.is_scratch()) continue;
    const auto name = c.init + "__" + c.target;
    const auto file = root / "transfer" / (name + ".json");
    const auto sc = scratch_of.find(c.target);
    const std::string stage_name = "transfer:" + name;
    if (sc == scratch_of.end()) {
      st.stage(stage_name, {}, {file}, "", [&] { throw PreconditionError("no scratch curve for target " + c.target); });
      continue;
    }
    const auto key = hash_of({{"stage", "transfer"},
                              {"scratch", transfer::curve_to_csv(*sc->second)},
                              {"finetuned", transfer::curve_to_csv(c)}});
    const bool ok = st.stage(stage_name, {}, {file}, key, [&] {
      io::write_file_atomic(file, transfer::to_json(transfer::data_transfer(*sc->second, c)).dump(2) + "\n");
    });
    if (ok) estimates.push_back(transfer::estimate_from_json(json::parse(io::read_file(file))));
  }
  std::vector<analysis::DtRecord> records;
  for (const auto& e : estimates)
    for (const auto& r : e.rows)
      records.push_back({e.source, e.target, r.size_bytes, static_cast<double>(r.transfer_bytes)});
  const auto records_text = analysis::write_dt_records(records);
  io::write_file_atomic(root / "transfer/dt_records.jsonl", records_text);

  // Covariates: contamination ratios from the stored corpora, plus distances.
  std::vector<analysis::Covariate> covariates;
  if (m.analysis.contamination) {
    const auto file = root / "analysis/contamination.json";
    json corpus_keys = json::object();
    std::vector<std::string> deps;
    for (const auto& [l, k] : source_key) {
      corpus_keys["source:" + l] = k;
      deps.push_back("corpus:source:" + l);
    }
    for (const auto& [l, k] : target_key) {
      corpus_keys["target:" + l] = k;
      deps.push_back("corpus:target:" + l);
    }
    const auto key = hash_of({{"stage", "contamination"},
                              {"corpora", corpus_keys},
                              {"threshold", m.analysis.threshold},
                              {"langid_bytes", m.analysis.langid_bytes},
                              {"seed", m.seed}});
    st.stage("contamination", deps, {file}, key, [&] {
      // A capped, seeded sample of each corpus trains the classifier and is scanned.
      std::map<std::string, corpus::Corpus> sample;
      auto add = [&](const corpus::Corpus& c) {
        const auto cap = std::min(m.analysis.langid_bytes, c.total_bytes());
        auto s = corpus::sample_budget(c, cap, derive_seed(m.seed, io::fnv1a("langid:" + c.language)));
        auto& slot = sample[c.language];
        slot.language = c.language;
        slot.documents.insert(slot.documents.end(), s.documents.begin(), s.documents.end());
      };
      for (const auto& e : m.sources) add(load_source(e.language));
      for (const auto& e : m.targets) add(load_target(e.language).pool);
      std::vector<corpus::Corpus> all;
      for (const auto& [_, c] : sample) all.push_back(c);
      const auto clf = analysis::train_langid(all);
      json reports = json::array();
      for (const auto& s : m.sources)
        for (const auto& t : m.targets) {
          if (s.language == t.language) continue;
          for (const auto d : {analysis::Direction::on_source, analysis::Direction::on_target})
            reports.push_back(analysis::to_json(
                analysis::contamination(clf, d, sample.at(s.language), sample.at(t.language), m.analysis.threshold)));
        }
      io::write_file_atomic(file, reports.dump(2) + "\n");
    });
    if (!st.failed("contamination") && fs::exists(file)) {
      std::map<std::string, analysis::Covariate> by_dir;
      std::map<std::string, std::string> csv;
      for (const auto& r : json::parse(io::read_file(file))) {
        const auto name = "contamination_" + r.at("direction").get<std::string>();
        auto& cov = by_dir[name];
        cov.name = name;
        cov.values[{r.at("source").get<std::string>(), r.at("target").get<std::string>()}] = r.at("ratio").get<double>();
        if (csv[name].empty()) csv[name] = "source,target,value\n";
        csv[name] += r.at("source").get<std::string>() + "," + r.at("target").get<std::string>() + "," +
                     io::exact(r.at("ratio").get<double>()) + "\n";
      }
      for (auto& [name, cov] : by_dir) {
        io::write_file_atomic(root / "analysis" / (name + ".csv"), csv[name]);
        covariates.push_back(std::move(cov));
      }
    }
  }
  if (m.analysis.distance_table) {
    const auto table = analysis::DistanceTable::from_csv(io::read_file(*m.analysis.distance_table));
    for (const auto& measure : table.measures()) covariates.push_back(table.covariate(measure));
  }

  json correlations = json::array();
  for (const auto& cov : covariates) {
    const auto name = "correlate:" + cov.name;
    json cov_values = json::array();
    for (const auto& [pair, v] : cov.values) cov_values.push_back({pair.first, pair.second, v});
    const auto file = root / "analysis" / ("correlation_" + cov.name + ".json");
    const auto key = hash_of({{"stage", "correlate"},
                              {"records", records_text},
                              {"covariate", cov_values},
                              {"symmetric", cov.symmetric},
                              {"exclude", m.analysis.exclude_largest_rung},
                              {"permutations", m.analysis.permutations},
                              {"seed", m.seed}});
    const bool ok = st.stage(name, {}, {file}, key, [&] {
      const auto r = analysis::correlate(records, cov, m.analysis.exclude_largest_rung, m.analysis.permutations,
                                         derive_seed(m.seed, io::fnv1a(name)));
      io::write_file_atomic(file, analysis::to_json(r).dump(2) + "\n");
    });
    if (ok) correlations.push_back(json::parse(io::read_file(file)));
  }
  io::write_file_atomic(root / "analysis/correlations.json", correlations.dump(2) + "\n");

  try {
    const auto report = write_report(root);
    summary.stages.push_back({"report", StageStatus::computed, ""});
    for (const auto& note : report.notes) st.say("report: " + note);
  } catch (const std::exception& e) {
    summary.stages.push_back({"report", StageStatus::failed, e.what()});
  }
  io::write_file_atomic(root / "run_summary.json", summary.to_json().dump(2) + "\n");
  return summary;
}

ReportResult write_report(const fs::path& store, const ReportOptions& options) {
  ReportResult out;
  if (!fs::exists(store / "manifest.json")) throw InputError(store.string() + " is not a result store (no manifest.json)");
  const auto manifest = json::parse(io::read_file(store / "manifest.json"));
  const auto unit = options.unit ? *options.unit
                                 : transfer::parse_unit(manifest.value("analysis", json::object()).value("unit", "MB"));
  const auto dir = store / "reports";
  fs::create_directories(dir);
  auto emit = [&](const std::string& name, const std::string& text) {
    io::write_file_atomic(dir / name, text);
    out.files.push_back("reports/" + name);
  };

  // Learning curves.
  const auto curves = load_curves(store / "curves");
  std::string fig2 = "target,init,size_bytes,perplexity\n";
  for (const auto& c : curves)
    for (const auto& p : c.points)
      fig2 += c.target + "," + c.init + "," + std::to_string(p.size_bytes) + "," + io::exact(p.perplexity) + "\n";
  emit("curves.csv", fig2);

  // Every estimate, one row per rung.
  std::vector<transfer::TransferEstimate> estimates;
  if (fs::is_directory(store / "transfer")) {
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(store / "transfer"))
      if (f.path().extension() == ".json") files.push_back(f.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) estimates.push_back(transfer::estimate_from_json(json::parse(io::read_file(f))));
  }
  std::string disp = "source,target,rung_bytes,perplexity,effective_bytes,transfer_bytes,transfer_mb,transfer_mib,clamped,negative\n";
  for (const auto& e : estimates)
    for (const auto& r : e.rows)
      disp += e.source + "," + e.target + "," + std::to_string(r.size_bytes) + "," + io::exact(r.perplexity) + "," +
              std::to_string(r.effective_bytes) + "," + std::to_string(r.transfer_bytes) + "," +
              transfer::format_units(static_cast<double>(r.transfer_bytes), transfer::Unit::mb) + "," +
              transfer::format_units(static_cast<double>(r.transfer_bytes), transfer::Unit::mib) + "," +
              (r.clamped ? "true" : "false") + "," + (r.negative() ? "true" : "false") + "\n";
  emit("transfer_dispersion.csv", disp);

  if (estimates.empty()) {
    out.notes.push_back("no transfer estimates; matrix, summaries and commutativity skipped");
    io::write_file_atomic(dir / "report.json", json({{"files", out.files}, {"notes", out.notes}}).dump(2) + "\n");
    out.files.push_back("reports/report.json");
    return out;
  }

  // Per-source spread across targets, for each rung.
  const std::string uname(transfer::unit_name(unit));
  std::map<std::pair<std::string, std::int64_t>, std::vector<double>> spread;
  for (const auto& e : estimates)
    for (const auto& r : e.rows)
      spread[{e.source, r.size_bytes}].push_back(transfer::convert_units(static_cast<double>(r.transfer_bytes), unit));
  std::string fig4 = "source,rung_bytes,unit,n,min,q1,median,q3,max\n";
  bool any_summary = false;
  for (const auto& [k, v] : spread) {
    if (v.size() < 2) continue;
    const auto f = analysis::five_number(v);
    fig4 += k.first + "," + std::to_string(k.second) + "," + uname + "," + std::to_string(v.size()) + "," +
            io::fixed(f.min, 2) + "," + io::fixed(f.q1, 2) + "," + io::fixed(f.median, 2) + "," + io::fixed(f.q3, 2) +
            "," + io::fixed(f.max, 2) + "\n";
    any_summary = true;
  }
  if (any_summary) emit("transfer_summary.csv", fig4);
  else out.notes.push_back("every source has a single target; no distribution summary");

  // Source x target matrix at the smallest rung.
  std::int64_t smallest = estimates.front().rows.front().size_bytes;
  for (const auto& e : estimates)
    for (const auto& r : e.rows) smallest = std::min(smallest, r.size_bytes);
  const auto matrix = transfer::transfer_matrix(estimates, smallest);
  for (const auto u : {transfer::Unit::bytes, transfer::Unit::mb, transfer::Unit::mib})
    emit("transfer_matrix_" + std::string(transfer::unit_name(u)) + ".csv", transfer::matrix_to_csv(matrix, u));

  std::vector<analysis::DtEntry> entries;
  for (std::size_t s = 0; s < matrix.sources.size(); ++s)
    for (std::size_t t = 0; t < matrix.targets.size(); ++t)
      if (const auto& v = matrix.transfer_bytes[s][t])
        entries.push_back({matrix.sources[s], matrix.targets[t], transfer::convert_units(static_cast<double>(*v), unit)});
  json commut = nullptr;
  try {
    const auto c = analysis::commutativity(entries, uname);
    emit("commutativity.csv", analysis::to_csv(c));
    commut = analysis::to_json(c);
  } catch (const PreconditionError& e) {
    out.notes.push_back(std::string("commutativity skipped: ") + e.what());
  }

  json correlations = json::array();
  if (fs::exists(store / "analysis/correlations.json"))
    correlations = json::parse(io::read_file(store / "analysis/correlations.json"));

  json report = {{"unit", uname},
                 {"matrix_rung_bytes", smallest},
                 {"estimates", estimates.size()},
                 {"correlations", correlations},
                 {"commutativity", commut},
                 {"files", out.files},
                 {"notes", out.notes}};
  io::write_file_atomic(dir / "report.json", report.dump(2) + "\n");
  out.files.push_back("reports/report.json");
  return out;
}

}  // namespace xferlab::pipeline
