#pragma once

#include <filesystem>
#include <string>

#include "xferlab/bytelm/parameters.hpp"

namespace xferlab::bytelm {

// Checkpoint layout, all integers little-endian:
//
//   magic      8 bytes  "XFLMCKPT"
//   version    u32      1
//   config     9 x u32  vocab_size d_model n_layers n_heads d_head d_ff
//                       seq_len n_rel_buckets rel_max_distance
//   n_tensors  u32
//   per tensor:
//     name_len u32, name bytes (UTF-8, no terminator)
//     ndim     u32 (1 or 2), dims ndim x u64
//     data     prod(dims) x float32, row-major
//
// Tensors appear in for_each_tensor order; readers match them by name.

inline constexpr char kCheckpointMagic[8] = {'X', 'F', 'L', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize(const Parameters<float>& params);
Parameters<float> deserialize(std::string_view bytes);

void save_checkpoint(const Parameters<float>& params, const std::filesystem::path& path);
Parameters<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace xferlab::bytelm
