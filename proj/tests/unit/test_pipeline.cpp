#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include <json.hpp>

#include "xferlab/errors.hpp"
#include "xferlab/io.hpp"
#include "xferlab/pipeline/manifest.hpp"
#include "xferlab/pipeline/run.hpp"

using namespace xferlab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = XFERLAB_FIXTURES_DIR;

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("xferlab_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json tiny_manifest(const std::string& out) {
  return json::parse(R"({
    "version": 1, "seed": 7, "output_dir": ")" + out + R"(",
    "training": {
      "pretrain": {"peak_lr": 1e-3, "final_lr": 1e-4, "total_steps": 20, "eval_interval": 10},
      "finetune": {"peak_lr": 1e-3, "warmup_by_size": false, "epochs": 2, "largest_rung_epochs": 2, "eval_interval": 50}
    },
    "targets": [{"language": "t", "bytes": 40000, "test_bytes": 4000,
                 "synthetic": {"seed": 1, "vocab_size": 200}}],
    "sources": [{"language": "a", "bytes": 20000, "synthetic": {"seed": 2, "vocab_size": 200, "parent": "t", "overlap_fraction": 0.5}},
                {"language": "b", "bytes": 20000, "synthetic": {"seed": 3, "vocab_size": 200, "char_range": [65, 90]}}],
    "ladder": [8000, 24000],
    "analysis": {"contamination": false}
  })");
}

std::size_t count_prefix(const pipeline::RunSummary& s, const std::string& prefix, pipeline::StageStatus status) {
  return static_cast<std::size_t>(std::count_if(s.stages.begin(), s.stages.end(), [&](const auto& o) {
    return o.name.rfind(prefix, 0) == 0 && o.status == status;
  }));
}

bool has_problem(const std::vector<std::string>& errors, const std::string& text) {
  return std::any_of(errors.begin(), errors.end(), [&](const auto& e) { return e.find(text) != std::string::npos; });
}

}  // namespace

TEST_CASE("manifest validation collects every problem with its field path") {
  auto j = tiny_manifest("out");
  j.erase("seed");
  j["ladder"] = {8000, 8000, 900000};
  j["sources"][0]["synthetic"]["parent"] = "nowhere";
  j["sources"][1].erase("synthetic");
  j["sources"][1]["corpus"] = "missing.txt";
  j["analysis"]["colour"] = "blue";
  j["training"]["finetune"]["peak_lr"] = -1.0;
  j["analysis"]["unit"] = "furlongs";

  const auto check = pipeline::check_manifest(j, scratch_dir("validate"));
  const auto& e = check.errors;
  CHECK(has_problem(e, "seed: is required"));
  CHECK(has_problem(e, "ladder[1]: rungs must be strictly increasing"));
  CHECK(has_problem(e, "ladder[2]: rung 900000 exceeds"));
  CHECK(has_problem(e, "sources[0].synthetic: parent 'nowhere'"));
  CHECK(has_problem(e, "sources[1].corpus: file"));
  CHECK(has_problem(e, "analysis.colour: unknown field"));
  CHECK(has_problem(e, "training.finetune:"));
  CHECK(has_problem(e, "analysis.unit:"));
  CHECK(e.size() >= 8);

  auto one = tiny_manifest("out");
  one["ladder"] = {8000};
  CHECK(has_problem(pipeline::check_manifest(one, scratch_dir("one_rung")).errors, "ladder: needs at least 2 rungs"));
}

TEST_CASE("a valid manifest passes and its snapshot validates on its own") {
  const auto dir = scratch_dir("snapshot");
  const auto check = pipeline::check_manifest(tiny_manifest("out"), dir);
  REQUIRE(check.errors.empty());
  const auto& m = check.manifest;
  CHECK(m.output_dir == dir / "out");
  CHECK(m.sources.size() == 2);
  // The parent reference is inlined so the snapshot needs no other entry.
  CHECK(m.snapshot["sources"][0]["synthetic"]["parent"].is_object());
  const auto again = pipeline::check_manifest(m.snapshot, dir / "elsewhere");
  CHECK(again.errors.empty());
  CHECK(again.manifest.snapshot == m.snapshot);
}

TEST_CASE("load_manifest rejects malformed JSON as a validation failure") {
  const auto dir = scratch_dir("badjson");
  io::write_file_atomic(dir / "m.json", "{ not json");
  CHECK_THROWS_AS(pipeline::load_manifest(dir / "m.json"), ValidationError);
}

TEST_CASE("run computes, skips on rerun, and recomputes only a deleted curve") {
  const auto dir = scratch_dir("run");
  auto check = pipeline::check_manifest(tiny_manifest("store"), dir);
  REQUIRE(check.errors.empty());
  const auto& m = check.manifest;

  const auto first = pipeline::run(m);
  for (const auto& s : first.stages) INFO(s.name << " " << s.detail);
  REQUIRE(first.ok());
  CHECK(count_prefix(first, "pretrain:", pipeline::StageStatus::computed) == 2);
  CHECK(count_prefix(first, "ladder:", pipeline::StageStatus::computed) == 3);
  for (const auto* f : {"manifest.json", "curves/t__scratch.csv", "curves/t__a.csv", "transfer/a__t.json",
                        "transfer/dt_records.jsonl", "checkpoints/a/checkpoint.bin", "runs/t__b/rung_24000/run.json",
                        "reports/transfer_matrix_MiB.csv", "reports/report.json"})
    CHECK_MESSAGE(fs::exists(m.output_dir / f), f);

  const auto second = pipeline::run(m);
  REQUIRE(second.ok());
  CHECK(second.count(pipeline::StageStatus::computed) == 1);  // only the report
  CHECK(second.stages.back().name == "report");

  const auto curve = m.output_dir / "curves/t__a.csv";
  const auto before = io::read_file(curve);
  fs::remove(curve);
  const auto third = pipeline::run(m);
  REQUIRE(third.ok());
  CHECK(count_prefix(third, "ladder:t__a", pipeline::StageStatus::computed) == 1);
  CHECK(count_prefix(third, "ladder:", pipeline::StageStatus::skipped) == 2);
  CHECK(count_prefix(third, "pretrain:", pipeline::StageStatus::skipped) == 2);
  CHECK(count_prefix(third, "transfer:", pipeline::StageStatus::skipped) == 2);
  CHECK(io::read_file(curve) == before);
}

TEST_CASE("identical manifests give byte-identical curves and reports") {
  const auto dir = scratch_dir("determinism");
  auto m = pipeline::check_manifest(tiny_manifest("one"), dir).manifest;
  REQUIRE(pipeline::run(m).ok());
  m.output_dir = dir / "two";
  REQUIRE(pipeline::run(m).ok());
  for (const auto* f : {"curves/t__scratch.csv", "curves/t__a.csv", "curves/t__b.csv", "transfer/dt_records.jsonl",
                        "reports/curves.csv", "reports/transfer_dispersion.csv", "reports/transfer_matrix_bytes.csv",
                        "reports/report.json"})
    CHECK_MESSAGE(io::read_file(dir / "one" / f) == io::read_file(dir / "two" / f), f);
}

TEST_CASE("a failed stage marks its dependents and independent stages still run") {
  const auto dir = scratch_dir("failure");
  auto j = tiny_manifest("store");
  io::write_file_atomic(dir / "b.txt", std::string(20000, 'x'));
  j["sources"][1].erase("synthetic");
  j["sources"][1]["corpus"] = "b.txt";
  auto check = pipeline::check_manifest(j, dir);
  REQUIRE(check.errors.empty());
  fs::remove(dir / "b.txt");  // disappears between validation and the run

  const auto s = pipeline::run(check.manifest);
  CHECK_FALSE(s.ok());
  CHECK(count_prefix(s, "corpus:source:b", pipeline::StageStatus::failed) == 1);
  CHECK(count_prefix(s, "pretrain:b", pipeline::StageStatus::failed) == 1);
  CHECK(count_prefix(s, "ladder:t__b", pipeline::StageStatus::failed) == 1);
  CHECK(count_prefix(s, "ladder:t__a", pipeline::StageStatus::computed) == 1);
  CHECK(count_prefix(s, "transfer:a__t", pipeline::StageStatus::computed) == 1);
}

TEST_CASE("analysis-only runs over imported curves reproduce the published matrix") {
  const auto dir = scratch_dir("imported");
  const json j = {{"seed", 0}, {"output_dir", "store"}, {"imported_curves", (kFixtures / "fig2").string()},
                  {"analysis", {{"unit", "MiB"}}}};
  const auto check = pipeline::check_manifest(j, dir);
  REQUIRE(check.errors.empty());
  const auto s = pipeline::run(check.manifest);
  REQUIRE(s.ok());
  CHECK(count_prefix(s, "import:", pipeline::StageStatus::computed) == 12);
  CHECK(count_prefix(s, "transfer:", pipeline::StageStatus::computed) == 9);
  CHECK(io::read_file(dir / "store/reports/transfer_matrix_MiB.csv") ==
        "source,ar,es,ja\nen,101.02,121.14,47.50\nru,99.00,67.88,47.81\nzh,90.63,50.27,69.48\n");
  // Only one direction per pair exists among these languages.
  CHECK_FALSE(fs::exists(dir / "store/reports/commutativity.csv"));
}

TEST_CASE("a single estimate yields a one-cell matrix and no spread summary") {
  const auto dir = scratch_dir("single");
  fs::create_directories(dir / "curves");
  for (const auto* f : {"es__scratch.csv", "es__en.csv"}) fs::copy_file(kFixtures / "fig2" / f, dir / "curves" / f);
  const json j = {{"seed", 0}, {"output_dir", "store"}, {"imported_curves", (dir / "curves").string()}};
  const auto s = pipeline::run(pipeline::check_manifest(j, dir).manifest);
  REQUIRE(s.ok());
  CHECK(io::read_file(dir / "store/reports/transfer_matrix_MiB.csv") == "source,es\nen,121.14\n");
  CHECK_FALSE(fs::exists(dir / "store/reports/transfer_summary.csv"));
  const auto report = pipeline::write_report(dir / "store");
  CHECK(std::find(report.notes.begin(), report.notes.end(), "every source has a single target; no distribution summary") !=
        report.notes.end());
}
