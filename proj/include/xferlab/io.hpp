#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace xferlab::io {

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it into place, so readers never
/// observe a partially written artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// 64-bit FNV-1a; stable across platforms and runs (used for stage keys).
std::uint64_t fnv1a(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t value);

/// Splits one CSV line on commas. Fields are not quoted in any format this
/// project writes; quoted fields are rejected.
std::vector<std::string> split_csv_line(std::string_view line);

std::vector<std::string> split_lines(std::string_view text);

/// Fixed-point decimal formatting ("%.{digits}f").
std::string fixed(double value, int digits);

/// Shortest round-tripping representation of a double.
std::string exact(double value);

}  // namespace xferlab::io
