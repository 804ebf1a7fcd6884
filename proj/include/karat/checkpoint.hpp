#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "karat/tensor.hpp"

namespace karat {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Layout (all integers 64-bit little-endian):
//   "KARAT1" | version byte | entry count
//   per entry: name length | UTF-8 name | rank | extents... | float64 LE values
inline constexpr char kCheckpointMagic[] = "KARAT1";
inline constexpr std::uint8_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& entries);
/// Throws FormatError naming the byte offset of the first malformed field.
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Looks up an entry by name; throws FormatError when missing.
const Tensor& find_entry(const std::vector<NamedTensor>& entries, const std::string& name);

}  // namespace karat
