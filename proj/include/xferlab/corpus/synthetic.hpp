#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "xferlab/corpus/corpus.hpp"

namespace xferlab::corpus {

/// Parameters of an artificial language: a Zipfian lexicon over a window of
/// code points, sentences of space-separated words, and optional bracketed
/// sub-clauses.
///
/// Within [char_lo, char_hi], the last code point terminates sentences and,
/// when nesting_depth > 0, the first two open and close clauses. The rest
/// form the alphabet. All code points are emitted as UTF-8, so a window
/// inside ASCII is a byte range.
struct SyntheticLangSpec {
  std::string language = "synth";
  std::uint64_t seed = 0;
  int vocab_size = 1000;
  double zipf_exponent = 1.0;
  int word_len_min = 2;
  int word_len_max = 7;
  int sentence_len_min = 4;
  int sentence_len_max = 12;
  int sentences_per_doc_min = 1;
  int sentences_per_doc_max = 4;
  std::uint32_t char_lo = 'a';
  std::uint32_t char_hi = 'z';
  double overlap_fraction = 0.0;
  int nesting_depth = 0;
  double clause_probability = 0.15;
  std::shared_ptr<const SyntheticLangSpec> parent;
};

std::vector<std::string> validate(const SyntheticLangSpec& spec);

/// This language's word list in Zipf rank order (entry 0 is the most frequent).
/// With a parent, round(overlap_fraction * vocab_size) seed-chosen ranks
/// hold the parent's word at that rank; every other rank gets a fresh word
/// distinct from all others. Throws PreconditionError when the alphabet
/// cannot supply enough distinct words.
std::vector<std::string> build_vocabulary(const SyntheticLangSpec& spec);

/// Generates exactly budget_bytes of text (the last document is cut at a
/// code point boundary). Reproducible for a fixed (spec, seed).
Corpus gen_synthetic(const SyntheticLangSpec& spec, std::size_t budget_bytes, std::uint64_t seed);

void to_json(nlohmann::json& j, const SyntheticLangSpec& spec);
void from_json(const nlohmann::json& j, SyntheticLangSpec& spec);

}  // namespace xferlab::corpus
