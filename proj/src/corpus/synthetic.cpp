#include "xferlab/corpus/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "xferlab/errors.hpp"
#include "xferlab/rng.hpp"

namespace xferlab::corpus {

namespace {

std::string encode_utf8(std::uint32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return out;
}

struct Glyphs {
  std::vector<std::string> alphabet;
  std::string open, close, stop;
};

Glyphs glyphs_of(const SyntheticLangSpec& s) {
  Glyphs g;
  std::uint32_t first = s.char_lo;
  if (s.nesting_depth > 0) {
    g.open = encode_utf8(s.char_lo);
    g.close = encode_utf8(s.char_lo + 1);
    first += 2;
  }
  g.stop = encode_utf8(s.char_hi);
  for (std::uint32_t cp = first; cp < s.char_hi; ++cp) g.alphabet.push_back(encode_utf8(cp));
  return g;
}

std::size_t shared_count(const SyntheticLangSpec& s) {
  return static_cast<std::size_t>(std::llround(s.overlap_fraction * s.vocab_size));
}

/// Number of distinct words the alphabet can spell, saturating.
double word_capacity(const SyntheticLangSpec& s, std::size_t alphabet) {
  double total = 0.0;
  for (int len = s.word_len_min; len <= s.word_len_max; ++len) total += std::pow(static_cast<double>(alphabet), len);
  return total;
}

}  // namespace

std::vector<std::string> validate(const SyntheticLangSpec& s) {
  std::vector<std::string> p;
  if (s.vocab_size < 10) p.push_back("vocab_size must be >= 10");
  if (!(s.zipf_exponent > 0.0)) p.push_back("zipf_exponent must be > 0");
  if (s.word_len_min < 1 || s.word_len_max < s.word_len_min) p.push_back("word length range invalid");
  if (s.sentence_len_min < 1 || s.sentence_len_max < s.sentence_len_min) p.push_back("sentence length range invalid");
  if (s.sentences_per_doc_min < 1 || s.sentences_per_doc_max < s.sentences_per_doc_min)
    p.push_back("sentences per document range invalid");
  if (s.char_lo > s.char_hi || s.char_hi > 0x10FFFF) p.push_back("character window invalid");
  if (s.char_lo <= 0x0A && s.char_hi >= 0x0A) p.push_back("character window must exclude the separator 0x0A");
  if (s.char_lo <= 0x20 && s.char_hi >= 0x20) p.push_back("character window must exclude the space 0x20");
  if (s.char_lo <= 0xDFFF && s.char_hi >= 0xD800) p.push_back("character window must exclude surrogates");
  const std::uint32_t reserved = s.nesting_depth > 0 ? 3u : 1u;
  if (s.char_hi >= s.char_lo && s.char_hi - s.char_lo + 1 < reserved + 2)
    p.push_back("character window leaves fewer than 2 letters");
  if (s.overlap_fraction < 0.0 || s.overlap_fraction > 1.0) p.push_back("overlap_fraction must be in [0, 1]");
  if (s.overlap_fraction > 0.0 && !s.parent) p.push_back("overlap_fraction > 0 requires a parent spec");
  if (s.parent && shared_count(s) > static_cast<std::size_t>(std::min(s.vocab_size, s.parent->vocab_size)))
    p.push_back("parent vocabulary too small for the requested overlap");
  if (s.nesting_depth < 0) p.push_back("nesting_depth must be >= 0");
  if (s.clause_probability < 0.0 || s.clause_probability >= 1.0) p.push_back("clause_probability must be in [0, 1)");
  if (s.parent)
    for (auto& msg : validate(*s.parent)) p.push_back("parent: " + msg);
  return p;
}

std::vector<std::string> build_vocabulary(const SyntheticLangSpec& s) {
  if (auto problems = validate(s); !problems.empty()) throw ValidationError(std::move(problems));
  const Glyphs g = glyphs_of(s);
  const auto V = static_cast<std::size_t>(s.vocab_size);
  const std::size_t n_shared = s.parent ? shared_count(s) : 0;
  if (word_capacity(s, g.alphabet.size()) < static_cast<double>(V - n_shared))
    throw PreconditionError("character window too small for " + std::to_string(V) + " distinct words");

  Rng rng(derive_seed(s.seed, 0x766f63));
  std::vector<std::string> vocab(V);
  std::vector<bool> filled(V, false);
  std::unordered_set<std::string> used;
  if (n_shared > 0) {
    const auto parent_vocab = build_vocabulary(*s.parent);
    std::vector<std::size_t> ranks(std::min(V, parent_vocab.size()));
    std::iota(ranks.begin(), ranks.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(ranks));
    for (std::size_t i = 0; i < n_shared; ++i) {
      vocab[ranks[i]] = parent_vocab[ranks[i]];
      filled[ranks[i]] = true;
      used.insert(parent_vocab[ranks[i]]);
    }
  }
  const std::size_t max_attempts = 1000 * V + 100000;
  std::size_t attempts = 0;
  for (std::size_t r = 0; r < V; ++r) {
    if (filled[r]) continue;
    while (true) {
      if (++attempts > max_attempts)
        throw PreconditionError("could not draw " + std::to_string(V) + " distinct words from the character window");
      const auto len = s.word_len_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.word_len_max - s.word_len_min + 1)));
      std::string word;
      for (int k = 0; k < len; ++k) word += g.alphabet[rng.below(g.alphabet.size())];
      if (used.insert(word).second) {
        vocab[r] = std::move(word);
        break;
      }
    }
  }
  return vocab;
}

Corpus gen_synthetic(const SyntheticLangSpec& s, std::size_t budget_bytes, std::uint64_t seed) {
  const auto vocab = build_vocabulary(s);
  const Glyphs g = glyphs_of(s);

  std::vector<double> cdf(vocab.size());
  double acc = 0.0;
  for (std::size_t r = 0; r < vocab.size(); ++r) {
    acc += std::pow(static_cast<double>(r + 1), -s.zipf_exponent);
    cdf[r] = acc;
  }
  for (auto& c : cdf) c /= acc;

  Rng rng(derive_seed(seed, 0x74657874));
  auto uniform_int = [&](int lo, int hi) {
    return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  };
  auto word = [&]() -> const std::string& {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), rng.uniform());
    return vocab[std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), vocab.size() - 1)];
  };

  std::vector<std::string> tokens;
  auto clause = [&](auto& self, int depth, int len_min, int len_max) -> void {
    const int n = uniform_int(len_min, len_max);
    for (int i = 0; i < n; ++i) {
      if (depth < s.nesting_depth && rng.uniform() < s.clause_probability) {
        tokens.push_back(g.open);
        self(self, depth + 1, std::max(1, len_min / 2), std::max(1, len_max / 2));
        tokens.push_back(g.close);
      }
      tokens.push_back(word());
    }
  };

  Corpus out;
  out.language = s.language;
  std::size_t total = 0;
  while (total < budget_bytes) {
    std::string doc;
    const int sentences = uniform_int(s.sentences_per_doc_min, s.sentences_per_doc_max);
    for (int k = 0; k < sentences; ++k) {
      tokens.clear();
      clause(clause, 0, s.sentence_len_min, s.sentence_len_max);
      if (!doc.empty()) doc += ' ';
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (t > 0) doc += ' ';
        doc += tokens[t];
      }
      doc += g.stop;
    }
    const std::size_t take = utf8_prefix(doc, budget_bytes - total);
    if (take == 0) break;
    doc.resize(take);
    total += take;
    out.documents.push_back(std::move(doc));
  }
  return out;
}

void to_json(nlohmann::json& j, const SyntheticLangSpec& s) {
  j = nlohmann::json{{"language", s.language},
                     {"seed", s.seed},
                     {"vocab_size", s.vocab_size},
                     {"zipf_exponent", s.zipf_exponent},
                     {"word_length", {s.word_len_min, s.word_len_max}},
                     {"sentence_length", {s.sentence_len_min, s.sentence_len_max}},
                     {"sentences_per_doc", {s.sentences_per_doc_min, s.sentences_per_doc_max}},
                     {"char_range", {s.char_lo, s.char_hi}},
                     {"overlap_fraction", s.overlap_fraction},
                     {"nesting_depth", s.nesting_depth},
                     {"clause_probability", s.clause_probability}};
  if (s.parent) j["parent"] = *s.parent;
}

void from_json(const nlohmann::json& j, SyntheticLangSpec& s) {
  SyntheticLangSpec d;
  s.language = j.value("language", d.language);
  s.seed = j.value("seed", d.seed);
  s.vocab_size = j.value("vocab_size", d.vocab_size);
  s.zipf_exponent = j.value("zipf_exponent", d.zipf_exponent);
  auto pair = [&](const char* key, auto& lo, auto& hi) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw InputError(std::string(key) + " must be a [lo, hi] pair");
    v.at(0).get_to(lo);
    v.at(1).get_to(hi);
  };
  s.word_len_min = d.word_len_min;
  s.word_len_max = d.word_len_max;
  s.sentence_len_min = d.sentence_len_min;
  s.sentence_len_max = d.sentence_len_max;
  s.sentences_per_doc_min = d.sentences_per_doc_min;
  s.sentences_per_doc_max = d.sentences_per_doc_max;
  s.char_lo = d.char_lo;
  s.char_hi = d.char_hi;
  pair("word_length", s.word_len_min, s.word_len_max);
  pair("sentence_length", s.sentence_len_min, s.sentence_len_max);
  pair("sentences_per_doc", s.sentences_per_doc_min, s.sentences_per_doc_max);
  pair("char_range", s.char_lo, s.char_hi);
  s.overlap_fraction = j.value("overlap_fraction", d.overlap_fraction);
  s.nesting_depth = j.value("nesting_depth", d.nesting_depth);
  s.clause_probability = j.value("clause_probability", d.clause_probability);
  s.parent.reset();
  if (j.contains("parent") && !j.at("parent").is_null())
    s.parent = std::make_shared<const SyntheticLangSpec>(j.at("parent").get<SyntheticLangSpec>());
}

}  // namespace xferlab::corpus
