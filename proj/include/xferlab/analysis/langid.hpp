#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "xferlab/corpus/corpus.hpp"

namespace xferlab::analysis {

/// Byte n-gram Naive Bayes language identifier. Each language holds
/// additively smoothed counts over all 256^n byte n-grams; lines are padded
/// with 0x0A on both sides before counting.
class LangClassifier {
 public:
  struct Prediction {
    std::string language;
    double confidence = 0.0;
    std::vector<double> posterior;  // aligned with languages()
  };

  const std::vector<std::string>& languages() const { return languages_; }
  int order() const { return n_; }
  double smoothing() const { return alpha_; }
  bool knows(std::string_view language) const;

  /// Per-language log probability of one n-gram.
  double log_prob(std::size_t language, std::uint64_t gram) const;

  /// Mean over the line's n-grams of each n-gram's posterior under a uniform
  /// prior, so a line made half of one language and half of another scores
  /// about 0.5 for each. N-grams no language has seen are ignored; a line
  /// made only of those gets a uniform posterior. Empty lines (after stripping newlines and CR) yield
  /// nothing.
  std::optional<Prediction> classify_line(std::string_view line) const;

  nlohmann::json to_json() const;
  static LangClassifier from_json(const nlohmann::json& j);

  friend LangClassifier train_langid(const std::vector<corpus::Corpus>&, int, double);

 private:
  int n_ = 3;
  double alpha_ = 0.01;
  std::vector<std::string> languages_;
  std::vector<std::unordered_map<std::uint64_t, std::uint64_t>> counts_;
  std::vector<std::uint64_t> totals_;
  std::vector<double> log_unseen_;
  std::vector<double> log_norm_;
};

inline constexpr std::size_t kMinLangidBytes = 10000;

/// Needs at least two distinct languages with kMinLangidBytes each.
/// Corpora with the same language tag are pooled. Counts do not depend on
/// document order.
LangClassifier train_langid(const std::vector<corpus::Corpus>& corpora, int n = 3, double smoothing = 0.01);

/// Non-empty lines of every document, in order.
std::vector<std::string> corpus_lines(const corpus::Corpus& corpus);

enum class Direction { on_source, on_target };

std::string to_string(Direction direction);
Direction parse_direction(std::string_view name);

struct ContaminationReport {
  Direction direction = Direction::on_target;
  std::string source;
  std::string target;
  std::string corpus_language;  // language of the scanned corpus
  std::string probe;            // language being looked for
  std::size_t lines_total = 0;
  std::size_t lines_matched = 0;
  double ratio = 0.0;
  double threshold = 0.6;
};

nlohmann::json to_json(const ContaminationReport& report);

/// Share of lines in `corpus` classified as `probe` with confidence above
/// `threshold`. Empty lines are not counted.
ContaminationReport contamination_ratio(const LangClassifier& classifier, const corpus::Corpus& corpus,
                                        const std::string& probe, double threshold = 0.6);

/// on_target scans the target corpus for source-language lines; on_source
/// scans the source corpus for target-language lines.
ContaminationReport contamination(const LangClassifier& classifier, Direction direction,
                                  const corpus::Corpus& source, const corpus::Corpus& target,
                                  double threshold = 0.6);

struct LineLabel {
  std::size_t line_no = 0;
  std::string language;
  double confidence = 0.0;
};

/// Externally produced labels as CSV with header line_no,lang,confidence.
std::vector<LineLabel> read_line_labels(std::string_view csv);

ContaminationReport contamination_from_labels(const std::vector<LineLabel>& labels, const std::string& probe,
                                              double threshold = 0.6);

}  // namespace xferlab::analysis
