#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "karat/dataset.hpp"
#include "karat/vit.hpp"

namespace karat::train {

struct DataConfig {
  std::string format = "synthetic";  // synthetic | idx | cifar10
  // idx: image file; cifar10: comma-separated batch files.
  std::string train_path;
  std::string train_labels;
  std::string test_path;
  std::string test_labels;
  std::size_t train_size = 512;  // synthetic size, or a cap on loaded data (0 = all)
  std::size_t test_size = 128;
  std::size_t classes = 2;
  std::size_t image_size = 16;
  double noise = 0.1;

  void validate() const;
};

struct TrainConfig {
  DataConfig data;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  double base_lr = 1e-3;
  std::size_t warmup_epochs = 2;
  double warmup_lr = 1e-6;
  double min_lr = 1e-5;
  double weight_decay = 0.05;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  double label_smoothing = 0.1;
  std::size_t eval_every = 1;  // epochs between test evaluations
  bool hflip = false;
  std::size_t crop_padding = 0;
  bool save_checkpoints = true;

  void validate() const;
};

struct Datasets {
  data::Dataset train;
  data::Dataset test;
};

/// Builds or loads the train/test split described by `cfg`. The synthetic
/// generator draws train and test from distinct streams of `seed`.
Datasets load_datasets(const DataConfig& cfg, std::uint64_t seed);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> top1, top5;
};

struct StepInfo {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;          // before clipping
  double clipped_grad_norm = 0.0;  // after clipping
};

struct TrainHooks {
  std::function<void(const StepInfo&)> on_step;
};

struct RunResult {
  std::vector<EpochMetrics> metrics;
  double train_accuracy = 0.0;  // top-1 on the training set after the last epoch
  std::vector<std::filesystem::path> checkpoints;  // per-epoch files, in order
};

struct Accuracy {
  double top1 = 0.0;
  double top5 = 0.0;
  std::size_t samples = 0;
};

/// Top-k membership: a sample counts when fewer than k classes outrank its
/// label, where ties are broken toward the lower class index.
Accuracy evaluate(const vit::VisionTransformer& model, const data::Dataset& ds);

/// Mean cross-entropy (no smoothing) over the whole dataset, without gradients.
double dataset_loss(const vit::VisionTransformer& model, const data::Dataset& ds);

/// Runs the configured epochs. When `out_dir` is non-empty it receives
/// metrics.csv and checkpoints/epoch_NNN.ckpt, best.ckpt, final.ckpt.
RunResult train(vit::VisionTransformer& model, const Datasets& data, const TrainConfig& cfg,
                const std::filesystem::path& out_dir = {}, const TrainHooks& hooks = {});

/// Student training on teacher attention: each forward substitutes the
/// teacher's post-activation matrices for every (layer, head); query and key
/// weights are excluded from optimization.
RunResult attention_transfer_train(const vit::VisionTransformer& teacher, vit::VisionTransformer& student,
                                   const Datasets& data, const TrainConfig& cfg,
                                   const std::filesystem::path& out_dir = {},
                                   const TrainHooks& hooks = {});

/// Teacher post-activation attention for one image, [layer][head].
std::vector<std::vector<Tensor>> teacher_attention(const vit::VisionTransformer& teacher,
                                                   const Tensor& image);

/// Formats a double with the shortest round-trip representation.
std::string format_number(double v);

inline constexpr const char* kMetricsHeader = "epoch,step,lr,train_loss,top1,top5";

}  // namespace karat::train
