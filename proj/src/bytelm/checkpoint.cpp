#include "xferlab/bytelm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <type_traits>

#include "xferlab/errors.hpp"
#include "xferlab/io.hpp"

namespace xferlab::bytelm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)).data(), sizeof(T));
    return value;
  }

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw InputError("checkpoint truncated at byte " + std::to_string(pos_));
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const Parameters<float>& params) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const auto& c = params.config;
  for (int v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_head, c.d_ff, c.seq_len, c.n_rel_buckets,
                c.rel_max_distance})
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v));

  std::uint32_t count = 0;
  for_each_tensor([&](const std::string&, const auto&) { ++count; }, params);
  put<std::uint32_t>(out, count);

  for_each_tensor(
      [&](const std::string& name, const auto& t) {
        using T = std::decay_t<decltype(t)>;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        if constexpr (T::ColsAtCompileTime == 1) {
          put<std::uint32_t>(out, 1);
          put<std::uint64_t>(out, static_cast<std::uint64_t>(t.size()));
        } else {
          put<std::uint32_t>(out, 2);
          put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
          put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
        }
        out.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(float));
      },
      params);
  return out;
}

Parameters<float> deserialize(std::string_view bytes) {
  Reader in(bytes);
  if (std::memcmp(in.take(sizeof kCheckpointMagic).data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw InputError("not a checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw InputError("unsupported checkpoint version " + std::to_string(version));
  ModelConfig c;
  for (int* field : {&c.vocab_size, &c.d_model, &c.n_layers, &c.n_heads, &c.d_head, &c.d_ff, &c.seq_len,
                     &c.n_rel_buckets, &c.rel_max_distance})
    *field = static_cast<int>(in.get<std::uint32_t>());
  auto params = zeros_like<float>(c);

  std::uint32_t expected = 0;
  for_each_tensor([&](const std::string&, const auto&) { ++expected; }, params);
  const auto count = in.get<std::uint32_t>();
  if (count != expected)
    throw InputError("checkpoint has " + std::to_string(count) + " tensors, config implies " +
                     std::to_string(expected));

  for_each_tensor(
      [&](const std::string& name, auto& t) {
        const auto name_len = in.get<std::uint32_t>();
        const auto stored = in.take(name_len);
        if (stored != name) throw InputError("expected tensor " + name + ", found " + std::string(stored));
        const auto ndim = in.get<std::uint32_t>();
        if (ndim < 1 || ndim > 2) throw InputError("tensor " + name + " has unsupported rank");
        const std::uint64_t rows = in.get<std::uint64_t>();
        const std::uint64_t cols = ndim == 2 ? in.get<std::uint64_t>() : 1;
        if (rows != static_cast<std::uint64_t>(t.rows()) || cols != static_cast<std::uint64_t>(t.cols()))
          throw InputError("tensor " + name + " shape mismatch");
        const std::uint64_t elements = rows * cols;
        const auto data = in.take(elements * sizeof(float));
        std::memcpy(t.data(), data.data(), data.size());
      },
      params);
  if (!in.done()) throw InputError("trailing bytes after checkpoint tensors");
  return params;
}

void save_checkpoint(const Parameters<float>& params, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize(params));
}

Parameters<float> load_checkpoint(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

}  // namespace xferlab::bytelm
