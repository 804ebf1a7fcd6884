#include "karat/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "karat/error.hpp"

namespace karat::data {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset file '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t offset, const std::string& source) {
  if (offset + 4 > b.size()) {
    throw FormatError(source + ": truncated header at byte offset " + std::to_string(offset));
  }
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

double pixel(std::uint8_t v) { return static_cast<double>(v) / 255.0 - 0.5; }

}  // namespace

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.image_size < 4 || spec.samples == 0) {
    throw ConfigError("synthetic dataset needs >= 2 classes, image size >= 4 and >= 1 sample");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise);
  const auto s = static_cast<double>(spec.image_size);
  std::uniform_real_distribution<double> centre(0.3 * s, 0.7 * s);
  std::uniform_real_distribution<double> length(0.4 * s, 0.7 * s);

  Dataset ds;
  ds.classes = spec.classes;
  ds.image_size = spec.image_size;
  ds.channels = 1;
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const int label = static_cast<int>(i % spec.classes);
    const double angle = std::numbers::pi * label / static_cast<double>(spec.classes);
    const double dx = std::cos(angle), dy = std::sin(angle);
    const double cx = centre(rng), cy = centre(rng), half = 0.5 * length(rng);
    Tensor img(Shape{spec.image_size, spec.image_size, 1});
    auto px = img.mutable_data();
    for (std::size_t y = 0; y < spec.image_size; ++y) {
      for (std::size_t x = 0; x < spec.image_size; ++x) {
        const double rx = x + 0.5 - cx, ry = y + 0.5 - cy;
        const double along = rx * dx + ry * dy;
        const double across = -rx * dy + ry * dx;
        const bool on = std::abs(along) <= half && std::abs(across) <= 1.0;
        px[y * spec.image_size + x] = (on ? 0.5 : -0.5) + noise(rng);
      }
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

Dataset parse_idx(const std::vector<std::uint8_t>& images, const std::vector<std::uint8_t>& labels,
                  const std::string& source) {
  const std::uint32_t img_magic = read_be32(images, 0, source + " images");
  if (img_magic != 0x00000803u) {
    throw FormatError(source + " images: bad magic at byte offset 0 (expected 0x00000803)");
  }
  const std::uint32_t n = read_be32(images, 4, source + " images");
  const std::uint32_t rows = read_be32(images, 8, source + " images");
  const std::uint32_t cols = read_be32(images, 12, source + " images");
  if (rows != cols || rows == 0) {
    throw FormatError(source + " images: non-square " + std::to_string(rows) + "x" +
                      std::to_string(cols) + " images at byte offset 8");
  }
  const std::size_t pixels = std::size_t{rows} * cols;
  const std::size_t expected = 16 + std::size_t{n} * pixels;
  if (images.size() != expected) {
    throw FormatError(source + " images: expected " + std::to_string(expected) +
                      " bytes, data ends at byte offset " + std::to_string(images.size()));
  }
  const std::uint32_t lbl_magic = read_be32(labels, 0, source + " labels");
  if (lbl_magic != 0x00000801u) {
    throw FormatError(source + " labels: bad magic at byte offset 0 (expected 0x00000801)");
  }
  const std::uint32_t nl = read_be32(labels, 4, source + " labels");
  if (nl != n) {
    throw FormatError(source + " labels: count " + std::to_string(nl) + " at byte offset 4 differs from " +
                      std::to_string(n) + " images");
  }
  if (labels.size() != 8 + std::size_t{n}) {
    throw FormatError(source + " labels: expected " + std::to_string(8 + std::size_t{n}) +
                      " bytes, data ends at byte offset " + std::to_string(labels.size()));
  }
  Dataset ds;
  ds.image_size = rows;
  ds.channels = 1;
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> px(pixels);
    for (std::size_t k = 0; k < pixels; ++k) px[k] = pixel(images[16 + i * pixels + k]);
    ds.images.emplace_back(Shape{rows, cols, 1}, std::move(px));
    const int label = labels[8 + i];
    max_label = std::max(max_label, label);
    ds.labels.push_back(label);
  }
  ds.classes = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  return parse_idx(read_file(images), read_file(labels), images.filename().string());
}

Dataset parse_cifar10(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  constexpr std::size_t kSide = 32, kPlane = kSide * kSide, kRecord = 1 + 3 * kPlane;
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw FormatError(source + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of the 3073-byte record; last record starts at byte offset " +
                      std::to_string(bytes.size() - bytes.size() % kRecord));
  }
  Dataset ds;
  ds.classes = 10;
  ds.image_size = kSide;
  ds.channels = 3;
  for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
    const int label = bytes[off];
    if (label > 9) {
      throw FormatError(source + ": label " + std::to_string(label) + " out of range at byte offset " +
                        std::to_string(off));
    }
    std::vector<double> px(3 * kPlane);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t k = 0; k < kPlane; ++k) px[k * 3 + c] = pixel(bytes[off + 1 + c * kPlane + k]);
    }
    ds.images.emplace_back(Shape{kSide, kSide, 3}, std::move(px));
    ds.labels.push_back(label);
  }
  return ds;
}

Dataset load_cifar10(const std::vector<std::filesystem::path>& batches) {
  if (batches.empty()) throw ConfigError("no CIFAR-10 batch files given");
  Dataset all;
  for (const auto& path : batches) {
    Dataset part = parse_cifar10(read_file(path), path.filename().string());
    all.classes = part.classes;
    all.image_size = part.image_size;
    all.channels = part.channels;
    std::move(part.images.begin(), part.images.end(), std::back_inserter(all.images));
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
  }
  return all;
}

Dataset take(const Dataset& ds, std::size_t count) {
  Dataset out = ds;
  if (count < ds.size()) {
    out.images.resize(count);
    out.labels.resize(count);
  }
  return out;
}

}  // namespace karat::data
