#include "xferlab/corpus/corpus.hpp"

#include <numeric>

#include "xferlab/errors.hpp"
#include "xferlab/io.hpp"
#include "xferlab/rng.hpp"

namespace xferlab::corpus {

std::size_t Corpus::total_bytes() const {
  return std::accumulate(documents.begin(), documents.end(), std::size_t{0},
                         [](std::size_t n, const std::string& d) { return n + d.size(); });
}

std::size_t find_invalid_utf8(std::string_view text) {
  const auto* s = reinterpret_cast<const unsigned char*>(text.data());
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    const unsigned char c = s[i];
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return i;
    }
    if (i + len > n) return i;
    for (std::size_t k = 1; k < len; ++k) {
      if ((s[i + k] & 0xC0) != 0x80) return i;
      cp = (cp << 6) | (s[i + k] & 0x3F);
    }
    const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000);
    if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return i;
    i += len;
  }
  return std::string_view::npos;
}

std::vector<int> utf8_bytes(std::string_view text) {
  if (const auto bad = find_invalid_utf8(text); bad != std::string_view::npos)
    throw InputError("invalid UTF-8 at byte offset " + std::to_string(bad));
  std::vector<int> ids(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) ids[i] = static_cast<unsigned char>(text[i]);
  return ids;
}

std::string bytes_to_text(std::span<const int> ids) {
  std::string out(ids.size(), '\0');
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] > 255) throw InputError("byte id out of range at " + std::to_string(i));
    out[i] = static_cast<char>(ids[i]);
  }
  return out;
}

std::size_t utf8_prefix(std::string_view text, std::size_t max_bytes) {
  if (max_bytes >= text.size()) return text.size();
  std::size_t cut = max_bytes;
  while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
  return cut;
}

Corpus load_corpus(const std::filesystem::path& path, const std::string& language) {
  const std::string text = io::read_file(path);
  const auto ext = path.extension().string();
  const bool jsonl = ext == ".jsonl" || ext == ".json";
  Corpus corpus;
  corpus.language = language;
  std::size_t line_no = 0;
  for (auto& line : io::split_lines(text)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string doc;
    if (jsonl) {
      nlohmann::json record;
      try {
        record = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
      if (!record.contains("text")) {
        if (record.contains("meta")) continue;
        throw InputError(path.string() + ":" + std::to_string(line_no) + ": record has no \"text\" field");
      }
      doc = record.at("text").get<std::string>();
    } else {
      doc = std::move(line);
    }
    if (const auto bad = find_invalid_utf8(doc); bad != std::string_view::npos)
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": invalid UTF-8 at byte offset " +
                       std::to_string(bad));
    // A document may not contain the separator; treat embedded newlines as
    // document boundaries.
    for (auto& part : io::split_lines(doc))
      if (!part.empty()) corpus.documents.push_back(std::move(part));
  }
  return corpus;
}

void save_jsonl(const Corpus& corpus, const std::filesystem::path& path, const nlohmann::json& meta) {
  std::string out;
  if (!meta.is_null()) out += nlohmann::json{{"meta", meta}}.dump() + "\n";
  for (const auto& doc : corpus.documents) out += nlohmann::json{{"text", doc}}.dump() + "\n";
  io::write_file_atomic(path, out);
}

Corpus sample_budget(const Corpus& corpus, std::size_t budget_bytes, std::uint64_t seed) {
  const std::size_t available = corpus.total_bytes();
  if (budget_bytes > available)
    throw PreconditionError("budget of " + std::to_string(budget_bytes) + " bytes exceeds corpus size " +
                            std::to_string(available));
  std::vector<std::size_t> order(corpus.documents.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5a));
  rng.shuffle(std::span<std::size_t>(order));

  Corpus out;
  out.language = corpus.language;
  std::size_t used = 0;
  for (std::size_t idx : order) {
    if (used == budget_bytes) break;
    const std::string& doc = corpus.documents[idx];
    const std::size_t room = budget_bytes - used;
    const std::size_t take = utf8_prefix(doc, room);
    if (take == 0) continue;
    out.documents.push_back(doc.substr(0, take));
    used += take;
  }
  return out;
}

Holdout split_holdout(const Corpus& corpus, std::size_t bytes, std::uint64_t seed) {
  if (bytes > corpus.total_bytes()) throw PreconditionError("holdout larger than corpus");
  std::vector<std::size_t> order(corpus.documents.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x40));
  rng.shuffle(std::span<std::size_t>(order));
  Holdout out;
  out.heldout.language = corpus.language;
  out.remainder.language = corpus.language;
  std::size_t taken = 0;
  std::vector<bool> in_holdout(corpus.documents.size(), false);
  for (std::size_t idx : order) {
    if (taken >= bytes) break;
    in_holdout[idx] = true;
    taken += corpus.documents[idx].size();
  }
  // Original document order is kept on both sides.
  for (std::size_t i = 0; i < corpus.documents.size(); ++i)
    (in_holdout[i] ? out.heldout : out.remainder).documents.push_back(corpus.documents[i]);
  return out;
}

PackedSequences::PackedSequences(const Corpus& corpus, int seq_len) : seq_len_(seq_len) {
  if (seq_len < 2) throw PreconditionError("seq_len must be >= 2");
  for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
    if (i > 0) stream_.push_back(kSeparator);
    const auto& doc = corpus.documents[i];
    stream_.insert(stream_.end(), doc.begin(), doc.end());
  }
  count_ = stream_.size() / static_cast<std::size_t>(seq_len);
}

std::span<const std::uint8_t> PackedSequences::inputs(std::size_t index) const {
  return std::span<const std::uint8_t>(stream_).subspan(index * static_cast<std::size_t>(seq_len_),
                                                        static_cast<std::size_t>(seq_len_));
}

bytelm::TokenBatch PackedSequences::batch(std::span<const std::size_t> indices) const {
  bytelm::TokenBatch out;
  out.batch = static_cast<int>(indices.size());
  out.seq_len = seq_len_;
  const auto L = static_cast<std::size_t>(seq_len_);
  out.inputs.reserve(indices.size() * L);
  out.targets.reserve(indices.size() * L);
  out.mask.reserve(indices.size() * L);
  for (std::size_t idx : indices) {
    if (idx >= count_) throw PreconditionError("sequence index out of range");
    const std::size_t start = idx * L;
    for (std::size_t t = 0; t < L; ++t) {
      out.inputs.push_back(stream_[start + t]);
      const bool has_next = start + t + 1 < stream_.size();
      out.targets.push_back(has_next ? stream_[start + t + 1] : 0);
      out.mask.push_back(has_next ? 1 : 0);
    }
  }
  return out;
}

std::vector<bytelm::TokenBatch> PackedSequences::all_batches(std::size_t batch_sequences) const {
  if (batch_sequences == 0) throw PreconditionError("batch_sequences must be >= 1");
  std::vector<bytelm::TokenBatch> out;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < count_; ++i) {
    idx.push_back(i);
    if (idx.size() == batch_sequences || i + 1 == count_) {
      out.push_back(batch(idx));
      idx.clear();
    }
  }
  return out;
}

}  // namespace xferlab::corpus
