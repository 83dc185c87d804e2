// Command-line front end. Every subcommand is a thin wrapper over the
// library; nothing here computes a reported value.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xferlab/analysis/correlate.hpp"
#include "xferlab/analysis/langid.hpp"
#include "xferlab/bytelm/checkpoint.hpp"
#include "xferlab/corpus/corpus.hpp"
#include "xferlab/corpus/synthetic.hpp"
#include "xferlab/errors.hpp"
#include "xferlab/io.hpp"
#include "xferlab/pipeline/manifest.hpp"
#include "xferlab/pipeline/run.hpp"
#include "xferlab/training/trainer.hpp"
#include "xferlab/transfer/transfer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xferlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;

json read_json(const std::string& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

bytelm::ModelConfig model_arg(const std::string& arg) {
  if (arg == "desk") return bytelm::desk_preset();
  if (arg == "paper") return bytelm::paper_preset();
  return read_json(arg).get<bytelm::ModelConfig>();
}

training::TrainConfig train_arg(const std::string& arg, training::TrainConfig fallback) {
  if (arg.empty()) return fallback;
  if (arg == "pretrain") return training::pretrain_preset();
  if (arg == "finetune") return training::finetune_preset();
  return read_json(arg).get<training::TrainConfig>();
}

std::vector<std::int64_t> parse_ladder(const std::string& text) {
  std::vector<std::int64_t> out;
  for (const auto& f : io::split_csv_line(text)) {
    try {
      out.push_back(std::stoll(f));
    } catch (const std::exception&) {
      throw InputError("bad ladder rung '" + f + "'");
    }
  }
  return out;
}

training::ProgressFn printer(bool verbose) {
  if (!verbose) return {};
  return [](const training::LogRow& r) {
    if (r.dev_ppl)
      std::cerr << "step " << r.step << " loss " << io::fixed(r.loss, 4) << " dev_ppl " << io::fixed(*r.dev_ppl, 4)
                << "\n";
  };
}

void print_estimate(const transfer::TransferEstimate& e, transfer::Unit unit) {
  std::cout << "source,target,size_bytes,perplexity,effective_bytes,transfer_bytes,transfer_" << transfer::unit_name(unit)
            << ",clamped\n";
  for (const auto& r : e.rows)
    std::cout << e.source << "," << e.target << "," << r.size_bytes << "," << io::exact(r.perplexity) << ","
              << r.effective_bytes << "," << r.transfer_bytes << ","
              << transfer::format_units(static_cast<double>(r.transfer_bytes), unit) << ","
              << (r.clamped ? "true" : "false") << "\n";
  if (!e.pruned_scratch_points.empty())
    std::cerr << "note: " << e.pruned_scratch_points.size() << " scratch point(s) after the perplexity minimum were ignored\n";
  for (const auto& r : e.rows)
    if (r.clamped) std::cerr << "warning: perplexity at " << r.size_bytes << " bytes is outside the scratch range\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Byte-level transfer experiments: measure how much data a pretrained source language is worth."};
  app.require_subcommand(1);
  std::function<int()> action;

  // validate
  std::string manifest_path;
  auto* validate = app.add_subcommand("validate", "Check a manifest and report every problem");
  validate->add_option("manifest", manifest_path, "Manifest JSON")->required();
  validate->callback([&] {
    action = [&] {
      const auto m = pipeline::load_manifest(manifest_path);
      std::cout << "ok: " << m.sources.size() << " source(s), " << m.targets.size() << " target(s), "
                << m.ladder.size() << " rung(s), output " << m.output_dir.string() << "\n";
      return kExitOk;
    };
  });

  // gen-corpus
  std::string spec_path, out_path, language;
  std::size_t bytes = 0;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic-language corpus as JSON lines");
  gen->add_option("--spec", spec_path, "Synthetic language spec (JSON)")->required();
  gen->add_option("--bytes", bytes, "Exact corpus size in bytes")->required();
  gen->add_option("--seed", seed, "Generation seed")->required();
  gen->add_option("--out", out_path, "Output .jsonl")->required();
  gen->callback([&] {
    action = [&] {
      const auto spec = read_json(spec_path).get<corpus::SyntheticLangSpec>();
      if (auto v = corpus::validate(spec); !v.empty()) throw ValidationError(std::move(v));
      const auto c = corpus::gen_synthetic(spec, bytes, seed);
      corpus::save_jsonl(c, out_path, {{"spec", spec}, {"seed", seed}, {"bytes", c.total_bytes()}});
      std::cout << out_path << ": " << c.documents.size() << " documents, " << c.total_bytes() << " bytes\n";
      return kExitOk;
    };
  });

  // pretrain
  std::string corpus_path, model_spec = "desk", train_spec, out_dir;
  int steps = 0;
  bool verbose = false;
  auto* pre = app.add_subcommand("pretrain", "Pretrain a model on one source corpus");
  pre->add_option("--corpus", corpus_path, "Corpus (.jsonl or plain text)")->required();
  pre->add_option("--language", language, "Language tag")->required();
  pre->add_option("--model", model_spec, "desk, paper, or a model JSON file");
  pre->add_option("--config", train_spec, "Training config JSON (default: pretrain preset)");
  pre->add_option("--steps", steps, "Override total_steps");
  pre->add_option("--seed", seed, "Seed");
  pre->add_option("--out", out_dir, "Output directory")->required();
  pre->add_flag("--verbose", verbose, "Print dev evaluations");
  pre->callback([&] {
    action = [&] {
      auto cfg = train_arg(train_spec, training::pretrain_preset());
      if (steps > 0) cfg.total_steps = steps;
      cfg.seed = seed;
      const auto c = corpus::load_corpus(corpus_path, language);
      const auto r = training::pretrain(model_arg(model_spec), cfg, c, out_dir, printer(verbose));
      std::cout << "best dev perplexity " << io::fixed(r.record.best_dev_ppl, 4) << " at step " << r.record.best_step
                << "; checkpoint " << (fs::path(out_dir) / "checkpoint.bin").string() << "\n";
      return kExitOk;
    };
  });

  // ladder
  std::string pool_path, test_path, init_path, source_name, ladder_text;
  auto* lad = app.add_subcommand("ladder", "Finetune (or train from scratch) on each rung of a data ladder");
  lad->add_option("--pool", pool_path, "Target finetuning pool")->required();
  lad->add_option("--test", test_path, "Fixed target test set")->required();
  lad->add_option("--language", language, "Target language tag")->required();
  lad->add_option("--ladder", ladder_text, "Comma-separated rung sizes in bytes")->required();
  lad->add_option("--init", init_path, "Pretrained checkpoint (omit for scratch)");
  lad->add_option("--source", source_name, "Source tag recorded for the checkpoint");
  lad->add_option("--model", model_spec, "desk, paper, or a model JSON file (scratch only)");
  lad->add_option("--config", train_spec, "Training config JSON (default: finetune preset)");
  lad->add_option("--seed", seed, "Seed");
  lad->add_option("--out", out_dir, "Output directory")->required();
  lad->add_flag("--verbose", verbose, "Print dev evaluations");
  lad->callback([&] {
    action = [&] {
      auto cfg = train_arg(train_spec, training::finetune_preset());
      cfg.seed = seed;
      std::optional<bytelm::Parameters<float>> init;
      auto model = model_arg(model_spec);
      if (!init_path.empty()) {
        init = bytelm::load_checkpoint(init_path);
        model = init->config;
        if (source_name.empty()) throw InputError("--source is required with --init");
      }
      const auto pool = corpus::load_corpus(pool_path, language);
      const auto test = corpus::load_corpus(test_path, language);
      const auto r = training::finetune(init, source_name, model, parse_ladder(ladder_text), pool, test, cfg, out_dir,
                                        printer(verbose));
      const auto csv = transfer::curve_to_csv(r.curve);
      io::write_file_atomic(fs::path(out_dir) / "curve.csv", csv);
      std::cout << csv;
      return kExitOk;
    };
  });

  // dt
  std::string scratch_path, finetuned_path, unit_text = "MB";
  auto* dt = app.add_subcommand("dt", "Estimate transferred data from a scratch and a finetuned curve");
  dt->add_option("--scratch", scratch_path, "Scratch curve CSV")->required();
  dt->add_option("--finetuned", finetuned_path, "Finetuned curve CSV")->required();
  dt->add_option("--unit", unit_text, "bytes, MB or MiB");
  dt->add_option("--out", out_path, "Write the estimate as JSON");
  dt->callback([&] {
    action = [&] {
      const auto unit = transfer::parse_unit(unit_text);
      const auto e = transfer::data_transfer(transfer::curve_from_csv(io::read_file(scratch_path)),
                                             transfer::curve_from_csv(io::read_file(finetuned_path)));
      if (!out_path.empty()) io::write_file_atomic(out_path, transfer::to_json(e).dump(2) + "\n");
      print_estimate(e, unit);
      return kExitOk;
    };
  });

  // contamination
  std::vector<std::string> train_pairs;
  std::string probe, labels_path;
  double threshold = 0.6;
  auto* con = app.add_subcommand("contamination", "Share of corpus lines identified as another language");
  con->add_option("--train", train_pairs, "Classifier training data as lang=path (repeatable)");
  con->add_option("--corpus", corpus_path, "Corpus to scan");
  con->add_option("--labels", labels_path, "Precomputed labels CSV (line_no,lang,confidence) instead of a classifier");
  con->add_option("--probe", probe, "Language to look for")->required();
  con->add_option("--threshold", threshold, "Confidence a line must exceed");
  con->callback([&] {
    action = [&] {
      analysis::ContaminationReport r;
      if (!labels_path.empty()) {
        r = analysis::contamination_from_labels(analysis::read_line_labels(io::read_file(labels_path)), probe, threshold);
      } else {
        if (corpus_path.empty() || train_pairs.empty())
          throw InputError("give --labels, or --corpus with at least two --train lang=path entries");
        std::vector<corpus::Corpus> train;
        for (const auto& pair : train_pairs) {
          const auto eq = pair.find('=');
          if (eq == std::string::npos) throw InputError("--train expects lang=path, got '" + pair + "'");
          train.push_back(corpus::load_corpus(pair.substr(eq + 1), pair.substr(0, eq)));
        }
        const auto clf = analysis::train_langid(train);
        r = analysis::contamination_ratio(clf, corpus::load_corpus(corpus_path, "scanned"), probe, threshold);
      }
      std::cout << analysis::to_json(r).dump(2) << "\n";
      return kExitOk;
    };
  });

  // correlate
  std::string records_path, covariate_path, covariate_name = "covariate", distances_path, measure;
  bool keep_largest = false;
  std::size_t permutations = 10000;
  auto* cor = app.add_subcommand("correlate", "Spearman correlation of D_T with a covariate, with a permutation test");
  cor->add_option("--records", records_path, "D_T records (JSON lines)")->required();
  auto* cov_opt = cor->add_option("--covariate", covariate_path, "Covariate CSV (source,target,value)");
  cor->add_option("--name", covariate_name, "Covariate name for the output");
  auto* dist_opt = cor->add_option("--distances", distances_path, "Distance table CSV (measure,lang1,lang2,value)");
  cor->add_option("--measure", measure, "Distance measure to use with --distances");
  cov_opt->excludes(dist_opt);
  cor->add_flag("--keep-largest", keep_largest, "Keep the largest rung (excluded by default)");
  cor->add_option("--permutations", permutations, "Number of permutations");
  cor->add_option("--seed", seed, "Permutation seed");
  cor->callback([&] {
    action = [&] {
      analysis::Covariate cov;
      if (!covariate_path.empty()) {
        cov = analysis::read_covariate_csv(io::read_file(covariate_path), covariate_name);
      } else if (!distances_path.empty()) {
        if (measure.empty()) throw InputError("--measure is required with --distances");
        cov = analysis::DistanceTable::from_csv(io::read_file(distances_path)).covariate(measure);
      } else {
        throw InputError("give --covariate or --distances");
      }
      const auto r = analysis::correlate(analysis::read_dt_records(io::read_file(records_path)), cov, !keep_largest,
                                         permutations, seed);
      std::cout << analysis::to_json(r).dump(2) << "\n";
      return kExitOk;
    };
  });

  // commute
  std::string matrix_path;
  int digits = 2;
  auto* com = app.add_subcommand("commute", "Compare D_T in both directions for every language pair");
  com->add_option("--matrix", matrix_path, "Source x target matrix CSV")->required();
  com->add_option("--unit", unit_text, "Unit label of the matrix values");
  com->add_option("--digits", digits, "Decimal places");
  com->callback([&] {
    action = [&] {
      std::cout << analysis::to_csv(analysis::commutativity(analysis::read_dt_matrix(io::read_file(matrix_path)), unit_text),
                                    digits);
      return kExitOk;
    };
  });

  // report
  std::string store;
  std::string report_unit;
  auto* rep = app.add_subcommand("report", "Regenerate tables and figure data from a result store");
  rep->add_option("--store", store, "Result store directory")->required();
  rep->add_option("--unit", report_unit, "bytes, MB or MiB (default: the manifest's unit)");
  rep->callback([&] {
    action = [&] {
      pipeline::ReportOptions o;
      if (!report_unit.empty()) o.unit = transfer::parse_unit(report_unit);
      const auto r = pipeline::write_report(store, o);
      for (const auto& f : r.files) std::cout << (fs::path(store) / f).string() << "\n";
      for (const auto& n : r.notes) std::cerr << "note: " << n << "\n";
      return kExitOk;
    };
  });

  // run
  auto* runc = app.add_subcommand("run", "Run every stage of a manifest, skipping up-to-date results");
  runc->add_option("manifest", manifest_path, "Manifest JSON")->required();
  runc->add_option("--out", out_dir, "Override the manifest's output_dir");
  runc->add_flag("--verbose", verbose, "Log training progress");
  runc->callback([&] {
    action = [&] {
      auto m = pipeline::load_manifest(manifest_path);
      if (!out_dir.empty()) m.output_dir = fs::absolute(out_dir);
      pipeline::RunOptions o;
      o.log = &std::cerr;
      o.verbose = verbose;
      const auto s = pipeline::run(m, o);
      std::cout << "computed " << s.count(pipeline::StageStatus::computed) << ", skipped "
                << s.count(pipeline::StageStatus::skipped) << ", failed " << s.count(pipeline::StageStatus::failed)
                << "; results in " << m.output_dir.string() << "\n";
      for (const auto& st : s.stages)
        if (st.status == pipeline::StageStatus::failed) std::cerr << "failed: " << st.name << ": " << st.detail << "\n";
      return s.ok() ? kExitOk : kExitRuntime;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    return action();
  } catch (const ValidationError& e) {
    std::cerr << "invalid:\n";
    for (const auto& p : e.problems()) std::cerr << "  " << p << "\n";
    return kExitInvalid;
  } catch (const InputError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const PreconditionError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const json::exception& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
