#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "karat/harness.hpp"
#include "karat/vit.hpp"

namespace karat::config {

struct AnalysisConfig {
  std::string checkpoint;
  std::size_t samples = 5;       // images drawn from the test split for spectra
  std::string layers;            // comma-separated block indices; empty = last block
  std::size_t bins = 41;
  double range = 0.0;            // 0 = largest weight magnitude
  std::string trajectory;        // comma-separated checkpoints, or a directory of epoch_*.ckpt
  std::size_t resolution = 41;
  double extent = 1.0;
  bool filter_normalize = false;
  std::size_t eval_samples = 32; // loss-landscape evaluation subset
};

struct TransferConfig {
  std::string teacher_checkpoint;
  std::string teacher_config;    // resolved config of the teacher run
};

struct RunConfig {
  std::string model_preset = "vit-micro";
  vit::ViTConfig model = vit::preset("vit-micro");
  train::TrainConfig train;
  AnalysisConfig analysis;
  TransferConfig transfer;
  std::string eval_checkpoint;
};

using Entries = std::vector<std::pair<std::string, std::string>>;

/// Parses `key = value` lines; '#' starts a comment. Throws ConfigError with
/// the source and line number on malformed lines.
Entries parse_config_text(const std::string& text, const std::string& source = "config");
Entries read_config_file(const std::filesystem::path& path);

/// Applies entries over the defaults. `model.preset` is applied before any
/// other key; later entries win. Unknown keys and bad values throw ConfigError
/// naming the key.
RunConfig resolve(const Entries& entries);

/// Every key with its resolved value, one `key = value` per line, in schema order.
std::string render(const RunConfig& cfg);

std::vector<std::string> known_keys();

}  // namespace karat::config
