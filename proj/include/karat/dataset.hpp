#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "karat/tensor.hpp"

namespace karat::data {

/// Labeled images, each H x W x C (channel-last) with values roughly in [-0.5, 0.5].
struct Dataset {
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::size_t classes = 0;
  std::size_t image_size = 0;
  std::size_t channels = 0;

  std::size_t size() const { return images.size(); }
};

/// Oriented-bar images: class c draws a bar at angle c * 180/classes degrees,
/// at a random offset, on a noisy background. Labels cycle 0..classes-1.
struct SyntheticSpec {
  std::size_t samples = 512;
  std::size_t image_size = 16;
  std::size_t classes = 2;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

Dataset make_synthetic(const SyntheticSpec& spec);

/// IDX image file (magic 0x00000803, ubyte, n x rows x cols) paired with an
/// IDX label file (magic 0x00000801). Square images only. Format problems
/// throw FormatError naming the file and byte offset.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
/// (R, G, B planes of 32 x 32).
Dataset load_cifar10(const std::vector<std::filesystem::path>& batches);

/// Parses IDX/CIFAR payloads already in memory; `source` labels error messages.
Dataset parse_idx(const std::vector<std::uint8_t>& images, const std::vector<std::uint8_t>& labels,
                  const std::string& source = "idx");
Dataset parse_cifar10(const std::vector<std::uint8_t>& bytes, const std::string& source = "cifar10");

/// The first `count` samples (all if count >= size).
Dataset take(const Dataset& ds, std::size_t count);

}  // namespace karat::data
