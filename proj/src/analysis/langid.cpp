#include "xferlab/analysis/langid.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "xferlab/errors.hpp"
#include "xferlab/io.hpp"

namespace xferlab::analysis {

namespace {

std::string_view strip(std::string_view line) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
  while (!line.empty() && (line.front() == '\n' || line.front() == '\r')) line.remove_prefix(1);
  return line;
}

template <typename F>
void for_each_gram(std::string_view line, int n, F&& f) {
  std::string padded;
  padded.reserve(line.size() + 2);
  padded += '\n';
  padded += line;
  padded += '\n';
  if (padded.size() < static_cast<std::size_t>(n)) return;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= padded.size(); ++i) {
    std::uint64_t key = 0;
    for (int k = 0; k < n; ++k) key = (key << 8) | static_cast<unsigned char>(padded[i + static_cast<std::size_t>(k)]);
    f(key);
  }
}

}  // namespace

bool LangClassifier::knows(std::string_view language) const {
  return std::find(languages_.begin(), languages_.end(), language) != languages_.end();
}

double LangClassifier::log_prob(std::size_t l, std::uint64_t gram) const {
  const auto& c = counts_.at(l);
  const auto it = c.find(gram);
  if (it == c.end()) return log_unseen_[l];
  return std::log(static_cast<double>(it->second) + alpha_) - log_norm_[l];
}

std::optional<LangClassifier::Prediction> LangClassifier::classify_line(std::string_view line) const {
  line = strip(line);
  if (line.empty()) return std::nullopt;
  const std::size_t L = languages_.size();
  Prediction p;
  p.posterior.assign(L, 0.0);
  std::vector<double> lp(L);
  std::size_t grams = 0;
  for_each_gram(line, n_, [&](std::uint64_t g) {
    bool seen = false;
    for (const auto& c : counts_) seen = seen || c.count(g);
    if (!seen) return;
    for (std::size_t l = 0; l < L; ++l) lp[l] = log_prob(l, g);
    const double top = *std::max_element(lp.begin(), lp.end());
    double z = 0.0;
    for (auto& v : lp) z += v = std::exp(v - top);
    for (std::size_t l = 0; l < L; ++l) p.posterior[l] += lp[l] / z;
    ++grams;
  });
  for (auto& v : p.posterior) v = grams ? v / static_cast<double>(grams) : 1.0 / static_cast<double>(L);
  const auto best = static_cast<std::size_t>(std::max_element(p.posterior.begin(), p.posterior.end()) - p.posterior.begin());
  p.language = languages_[best];
  p.confidence = p.posterior[best];
  return p;
}

nlohmann::json LangClassifier::to_json() const {
  nlohmann::json langs = nlohmann::json::array();
  for (std::size_t l = 0; l < languages_.size(); ++l) {
    // Sorted so the serialized model does not depend on hash order.
    std::map<std::uint64_t, std::uint64_t> sorted(counts_[l].begin(), counts_[l].end());
    nlohmann::json grams = nlohmann::json::array();
    for (const auto& [g, c] : sorted) grams.push_back({g, c});
    langs.push_back({{"language", languages_[l]}, {"total", totals_[l]}, {"counts", grams}});
  }
  return {{"order", n_}, {"smoothing", alpha_}, {"languages", langs}};
}

LangClassifier LangClassifier::from_json(const nlohmann::json& j) {
  LangClassifier c;
  c.n_ = j.at("order").get<int>();
  c.alpha_ = j.at("smoothing").get<double>();
  const double space = std::pow(256.0, c.n_);
  for (const auto& l : j.at("languages")) {
    c.languages_.push_back(l.at("language").get<std::string>());
    c.totals_.push_back(l.at("total").get<std::uint64_t>());
    auto& m = c.counts_.emplace_back();
    for (const auto& g : l.at("counts")) m[g.at(0).get<std::uint64_t>()] = g.at(1).get<std::uint64_t>();
    const double norm = std::log(static_cast<double>(c.totals_.back()) + c.alpha_ * space);
    c.log_norm_.push_back(norm);
    c.log_unseen_.push_back(std::log(c.alpha_) - norm);
  }
  return c;
}

std::vector<std::string> corpus_lines(const corpus::Corpus& c) {
  std::vector<std::string> out;
  for (const auto& doc : c.documents)
    for (auto& line : io::split_lines(doc))
      if (auto s = strip(line); !s.empty()) out.emplace_back(s);
  return out;
}

LangClassifier train_langid(const std::vector<corpus::Corpus>& corpora, int n, double smoothing) {
  if (n < 1 || n > 7) throw PreconditionError("n-gram order must be in [1, 7]");
  if (!(smoothing > 0.0)) throw PreconditionError("smoothing must be > 0");
  std::map<std::string, std::vector<const corpus::Corpus*>> by_lang;
  for (const auto& c : corpora) by_lang[c.language].push_back(&c);
  if (by_lang.size() < 2) throw PreconditionError("language identification needs at least 2 languages");

  LangClassifier clf;
  clf.n_ = n;
  clf.alpha_ = smoothing;
  const double space = std::pow(256.0, n);
  for (const auto& [lang, parts] : by_lang) {
    std::size_t bytes = 0;
    for (const auto* p : parts) bytes += p->total_bytes();
    if (bytes < kMinLangidBytes)
      throw PreconditionError("language " + lang + " has " + std::to_string(bytes) + " bytes; need at least " +
                              std::to_string(kMinLangidBytes));
    auto& counts = clf.counts_.emplace_back();
    std::uint64_t total = 0;
    for (const auto* p : parts)
      for (const auto& line : corpus_lines(*p))
        for_each_gram(line, n, [&](std::uint64_t g) {
          ++counts[g];
          ++total;
        });
    clf.languages_.push_back(lang);
    clf.totals_.push_back(total);
    const double norm = std::log(static_cast<double>(total) + smoothing * space);
    clf.log_norm_.push_back(norm);
    clf.log_unseen_.push_back(std::log(smoothing) - norm);
  }
  return clf;
}

std::string to_string(Direction d) { return d == Direction::on_source ? "on_source" : "on_target"; }

Direction parse_direction(std::string_view name) {
  if (name == "on_source") return Direction::on_source;
  if (name == "on_target") return Direction::on_target;
  throw InputError("unknown direction '" + std::string(name) + "' (expected on_source or on_target)");
}

nlohmann::json to_json(const ContaminationReport& r) {
  return {{"direction", to_string(r.direction)}, {"source", r.source},
          {"target", r.target},                  {"corpus_language", r.corpus_language},
          {"probe", r.probe},                    {"lines_total", r.lines_total},
          {"lines_matched", r.lines_matched},    {"ratio", r.ratio},
          {"threshold", r.threshold}};
}

ContaminationReport contamination_ratio(const LangClassifier& clf, const corpus::Corpus& c, const std::string& probe,
                                        double threshold) {
  if (!clf.knows(probe)) throw PreconditionError("classifier does not know language '" + probe + "'");
  ContaminationReport r;
  r.corpus_language = c.language;
  r.probe = probe;
  r.threshold = threshold;
  for (const auto& line : corpus_lines(c)) {
    const auto p = clf.classify_line(line);
    if (!p) continue;
    ++r.lines_total;
    if (p->language == probe && p->confidence > threshold) ++r.lines_matched;
  }
  r.ratio = r.lines_total ? static_cast<double>(r.lines_matched) / static_cast<double>(r.lines_total) : 0.0;
  return r;
}

ContaminationReport contamination(const LangClassifier& clf, Direction direction, const corpus::Corpus& source,
                                  const corpus::Corpus& target, double threshold) {
  auto r = direction == Direction::on_target ? contamination_ratio(clf, target, source.language, threshold)
                                             : contamination_ratio(clf, source, target.language, threshold);
  r.direction = direction;
  r.source = source.language;
  r.target = target.language;
  return r;
}

std::vector<LineLabel> read_line_labels(std::string_view csv) {
  std::vector<LineLabel> out;
  bool header = false;
  for (auto& line : io::split_lines(csv)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != "line_no,lang,confidence") throw InputError("label CSV must start with line_no,lang,confidence");
      header = true;
      continue;
    }
    const auto f = io::split_csv_line(line);
    if (f.size() != 3) throw InputError("label row must have 3 fields: " + line);
    try {
      out.push_back({std::stoul(f[0]), f[1], std::stod(f[2])});
    } catch (const std::exception&) {
      throw InputError("bad label row: " + line);
    }
    if (out.back().confidence < 0.0 || out.back().confidence > 1.0)
      throw InputError("label confidence outside [0, 1]: " + line);
  }
  return out;
}

ContaminationReport contamination_from_labels(const std::vector<LineLabel>& labels, const std::string& probe,
                                              double threshold) {
  ContaminationReport r;
  r.probe = probe;
  r.threshold = threshold;
  r.lines_total = labels.size();
  for (const auto& l : labels)
    if (l.language == probe && l.confidence > threshold) ++r.lines_matched;
  r.ratio = r.lines_total ? static_cast<double>(r.lines_matched) / static_cast<double>(r.lines_total) : 0.0;
  return r;
}

}  // namespace xferlab::analysis
