#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xferlab/bytelm/model.hpp"

namespace xferlab::corpus {

inline constexpr std::uint8_t kSeparator = 0x0A;

struct Corpus {
  std::string language;
  std::vector<std::string> documents;  // each non-empty UTF-8

  std::size_t total_bytes() const;
};

/// Token ids of a UTF-8 string: the raw bytes. Throws InputError with the
/// byte offset of the first invalid sequence.
std::vector<int> utf8_bytes(std::string_view text);

/// Inverse of utf8_bytes.
std::string bytes_to_text(std::span<const int> ids);

/// Byte offset of the first invalid UTF-8 sequence, or npos.
std::size_t find_invalid_utf8(std::string_view text);

/// Longest prefix length <= max_bytes that ends on a code point boundary.
std::size_t utf8_prefix(std::string_view text, std::size_t max_bytes);

/// JSON-lines records with a "text" field, or plain text with one document
/// per line (chosen by a .jsonl/.json extension). Empty documents are
/// skipped and a leading {"meta": ...} record is ignored.
Corpus load_corpus(const std::filesystem::path& path, const std::string& language);

/// JSON-lines output; `meta`, when not null, is written as a first
/// {"meta": ...} record.
void save_jsonl(const Corpus& corpus, const std::filesystem::path& path, const nlohmann::json& meta = nullptr);

/// Draws documents uniformly without replacement in a seed-determined order
/// until `budget_bytes` is reached. The document that crosses the budget is
/// cut at a code point boundary; if that leaves a gap (multi-byte text),
/// following documents fill it the same way. Document bytes only, no
/// separators.
Corpus sample_budget(const Corpus& corpus, std::size_t budget_bytes, std::uint64_t seed);

struct Holdout {
  Corpus heldout;
  Corpus remainder;
};

/// Moves whole documents, in a seed-determined order, into `heldout` until
/// it holds at least `bytes` bytes.
Holdout split_holdout(const Corpus& corpus, std::size_t bytes, std::uint64_t seed);

/// Documents joined with 0x0A into one stream, cut into fixed-length
/// sequences. The trailing partial chunk is dropped. Each position's target
/// is the next stream byte; the very last stream position has no target and
/// is masked out.
class PackedSequences {
 public:
  PackedSequences(const Corpus& corpus, int seq_len);

  int seq_len() const { return seq_len_; }
  std::size_t size() const { return count_; }
  std::size_t stream_bytes() const { return stream_.size(); }
  std::size_t dropped_bytes() const { return stream_.size() - count_ * static_cast<std::size_t>(seq_len_); }

  std::span<const std::uint8_t> inputs(std::size_t index) const;

  /// Batch over the given sequence indices, in order.
  bytelm::TokenBatch batch(std::span<const std::size_t> indices) const;

  /// Every sequence, split into batches of at most `batch_sequences`.
  std::vector<bytelm::TokenBatch> all_batches(std::size_t batch_sequences) const;

 private:
  int seq_len_;
  std::vector<std::uint8_t> stream_;
  std::size_t count_;
};

}  // namespace xferlab::corpus
