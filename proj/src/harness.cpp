#include "karat/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "karat/checkpoint.hpp"
#include "karat/error.hpp"
#include "karat/ops.hpp"
#include "karat/optim.hpp"

namespace karat::train {

namespace {

std::vector<std::filesystem::path> split_paths(const std::string& list) {
  std::vector<std::filesystem::path> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.emplace_back(item);
  }
  return out;
}

// Seeds for the synthetic split; distinct so train and test never share images.
constexpr std::uint64_t kTrainStream = 0x7261696eull;
constexpr std::uint64_t kTestStream = 0x74657374ull;

Tensor augment(const Tensor& image, const TrainConfig& cfg, std::mt19937_64& rng) {
  if (!cfg.hflip && cfg.crop_padding == 0) return image;
  const std::size_t h = image.shape()[0], w = image.shape()[1], c = image.shape()[2];
  bool flip = false;
  if (cfg.hflip) flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  long oy = 0, ox = 0;
  if (cfg.crop_padding > 0) {
    const auto pad = static_cast<long>(cfg.crop_padding);
    std::uniform_int_distribution<long> shift(-pad, pad);
    oy = shift(rng);
    ox = shift(rng);
  }
  // Pixels shifted in from outside the image take the background value.
  const auto src = image.data();
  const double fill = *std::min_element(src.begin(), src.end());
  std::vector<double> out(image.size(), fill);
  for (std::size_t y = 0; y < h; ++y) {
    const long sy = static_cast<long>(y) + oy;
    if (sy < 0 || sy >= static_cast<long>(h)) continue;
    for (std::size_t x = 0; x < w; ++x) {
      long sx = static_cast<long>(x) + ox;
      if (sx < 0 || sx >= static_cast<long>(w)) continue;
      if (flip) sx = static_cast<long>(w) - 1 - sx;
      for (std::size_t ch = 0; ch < c; ++ch) {
        out[(y * w + x) * c + ch] = src[(static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * c + ch];
      }
    }
  }
  return Tensor(image.shape(), std::move(out));
}

void check_geometry(const vit::ViTConfig& model, const data::Dataset& ds, const std::string& which) {
  if (ds.size() == 0) return;
  if (ds.image_size != model.image_size || ds.channels != model.channels) {
    throw ConfigError(which + " images are " + std::to_string(ds.image_size) + "x" +
                      std::to_string(ds.image_size) + "x" + std::to_string(ds.channels) +
                      ", model expects " + std::to_string(model.image_size) + "x" +
                      std::to_string(model.image_size) + "x" + std::to_string(model.channels));
  }
  if (ds.classes > model.classes) {
    throw ConfigError(which + " set has " + std::to_string(ds.classes) + " classes, model head has " +
                      std::to_string(model.classes));
  }
}

std::string metrics_row(const EpochMetrics& m) {
  std::string row = std::to_string(m.epoch) + "," + std::to_string(m.step) + "," + format_number(m.lr) +
                    "," + format_number(m.train_loss) + ",";
  if (m.top1) row += format_number(*m.top1);
  row += ",";
  if (m.top5) row += format_number(*m.top5);
  return row;
}

std::string epoch_name(std::size_t epoch) {
  std::string digits = std::to_string(epoch);
  if (digits.size() < 3) digits.insert(0, 3 - digits.size(), '0');
  return "epoch_" + digits + ".ckpt";
}

bool is_query_key(const std::string& name) {
  for (const char* suffix : {".attn.wq", ".attn.bq", ".attn.wk", ".attn.bk"}) {
    const std::string s(suffix);
    if (name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0) return true;
  }
  return false;
}

RunResult run_training(vit::VisionTransformer& model, const vit::VisionTransformer* teacher,
                       const Datasets& data, const TrainConfig& cfg, const std::filesystem::path& out_dir,
                       const TrainHooks& hooks) {
  cfg.validate();
  check_geometry(model.config(), data.train, "training");
  check_geometry(model.config(), data.test, "test");
  if (data.train.size() == 0) throw ConfigError("training set is empty");

  std::vector<vit::Parameter> params;
  for (auto& p : model.parameters()) {
    if (teacher && is_query_key(p.name)) continue;
    params.push_back(p);
  }
  AdamW optimizer(params, AdamWConfig{.weight_decay = cfg.weight_decay});

  const std::size_t n = data.train.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const LrSchedule schedule{cfg.base_lr, cfg.warmup_lr, cfg.min_lr, steps_per_epoch * cfg.warmup_epochs};

  std::ofstream metrics_file;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    if (cfg.save_checkpoints) std::filesystem::create_directories(out_dir / "checkpoints");
    metrics_file.open(out_dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!metrics_file) throw FormatError("cannot write " + (out_dir / "metrics.csv").string());
    metrics_file << kMetricsHeader << '\n';
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RunResult result;
  std::optional<double> best_top1;
  std::size_t step = 0;
  double lr = schedule.warmup_lr;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      lr = lr_at(step, total_steps, schedule);
      Tape::current().reset();

      std::vector<Tensor> rows;
      std::vector<int> labels;
      rows.reserve(count);
      for (std::size_t b = 0; b < count; ++b) {
        const std::size_t idx = order[start + b];
        Tensor image = augment(data.train.images[idx], cfg, rng);
        if (teacher) {
          const auto attn = teacher_attention(*teacher, image);
          vit::ForwardOptions opts;
          opts.attention_override = &attn;
          rows.push_back(model.forward(image, opts));
        } else {
          rows.push_back(model.forward(image));
        }
        labels.push_back(data.train.labels[idx]);
      }
      Tensor loss = cross_entropy(concat_rows(rows), labels, cfg.label_smoothing);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        Tape::current().reset();
        throw NumericError("non-finite loss at step " + std::to_string(step));
      }
      backward(loss);
      StepInfo info;
      info.step = step;
      info.loss = loss_value;
      info.grad_norm = clip_grad_norm(params, cfg.grad_clip);
      info.clipped_grad_norm = global_grad_norm(params);
      optimizer.step(lr);
      model.enforce_constraints();
      optimizer.zero_grad();
      if (hooks.on_step) hooks.on_step(info);
      loss_sum += loss_value * static_cast<double>(count);
      ++step;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.step = step;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(n);
    const bool eval_now = data.test.size() > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
    if (eval_now) {
      const Accuracy acc = evaluate(model, data.test);
      m.top1 = acc.top1;
      m.top5 = acc.top5;
    }
    result.metrics.push_back(m);
    if (metrics_file.is_open()) {
      metrics_file << metrics_row(m) << '\n';
      metrics_file.flush();
    }
    if (!out_dir.empty() && cfg.save_checkpoints) {
      const auto state = model.state();
      const auto path = out_dir / "checkpoints" / epoch_name(epoch);
      save_checkpoint(path, state);
      result.checkpoints.push_back(path);
      if (m.top1 && (!best_top1 || *m.top1 > *best_top1)) {
        best_top1 = m.top1;
        save_checkpoint(out_dir / "checkpoints" / "best.ckpt", state);
      }
      if (epoch == cfg.epochs) save_checkpoint(out_dir / "checkpoints" / "final.ckpt", state);
    }
  }
  result.train_accuracy = evaluate(model, data.train).top1;
  return result;
}

}  // namespace

void DataConfig::validate() const {
  if (format == "synthetic") {
    if (train_size == 0) throw ConfigError("data.train_size must be positive for synthetic data");
    if (classes < 2) throw ConfigError("data.classes must be at least 2");
    if (!std::isfinite(noise) || noise < 0.0) throw ConfigError("data.noise must be finite and >= 0");
    return;
  }
  if (format != "idx" && format != "cifar10") {
    throw ConfigError("unknown data.format '" + format + "' (synthetic|idx|cifar10)");
  }
  if (train_path.empty()) throw ConfigError("data.train_path is required for format " + format);
  if (format == "idx" && train_labels.empty()) throw ConfigError("data.train_labels is required for format idx");
  if (format == "idx" && !test_path.empty() && test_labels.empty()) {
    throw ConfigError("data.test_labels is required when data.test_path is set");
  }
}

void TrainConfig::validate() const {
  data.validate();
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be > 0");
  if (warmup_epochs >= epochs) throw ConfigError("train.warmup_epochs must be < train.epochs");
  if (warmup_lr < 0.0 || min_lr < 0.0) throw ConfigError("train.warmup_lr and train.min_lr must be >= 0");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be > 0");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("train.label_smoothing must lie in [0, 1)");
  if (eval_every == 0) throw ConfigError("train.eval_every must be positive");
}

Datasets load_datasets(const DataConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Datasets out;
  if (cfg.format == "synthetic") {
    data::SyntheticSpec spec;
    spec.image_size = cfg.image_size;
    spec.classes = cfg.classes;
    spec.noise = cfg.noise;
    spec.samples = cfg.train_size;
    spec.seed = seed ^ kTrainStream;
    out.train = data::make_synthetic(spec);
    if (cfg.test_size > 0) {
      spec.samples = cfg.test_size;
      spec.seed = seed ^ kTestStream;
      out.test = data::make_synthetic(spec);
    }
    return out;
  }
  if (cfg.format == "idx") {
    out.train = data::load_idx(cfg.train_path, cfg.train_labels);
    if (!cfg.test_path.empty()) out.test = data::load_idx(cfg.test_path, cfg.test_labels);
  } else {
    out.train = data::load_cifar10(split_paths(cfg.train_path));
    if (!cfg.test_path.empty()) out.test = data::load_cifar10(split_paths(cfg.test_path));
  }
  if (cfg.train_size > 0) out.train = data::take(out.train, cfg.train_size);
  if (cfg.test_size > 0) out.test = data::take(out.test, cfg.test_size);
  return out;
}

Accuracy evaluate(const vit::VisionTransformer& model, const data::Dataset& ds) {
  NoGradGuard no_grad;
  Accuracy acc;
  acc.samples = ds.size();
  if (ds.size() == 0) return acc;
  std::size_t hit1 = 0, hit5 = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor logits = model.forward(ds.images[i]);
    const auto z = logits.data();
    const auto y = static_cast<std::size_t>(ds.labels[i]);
    std::size_t rank = 0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      if (z[j] > z[y] || (z[j] == z[y] && j < y)) ++rank;
    }
    hit1 += rank < 1;
    hit5 += rank < 5;
  }
  acc.top1 = static_cast<double>(hit1) / static_cast<double>(ds.size());
  acc.top5 = static_cast<double>(hit5) / static_cast<double>(ds.size());
  return acc;
}

double dataset_loss(const vit::VisionTransformer& model, const data::Dataset& ds) {
  NoGradGuard no_grad;
  if (ds.size() == 0) throw ConfigError("cannot evaluate loss on an empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    total += cross_entropy(model.forward(ds.images[i]), {ds.labels[i]}).item();
  }
  return total / static_cast<double>(ds.size());
}

RunResult train(vit::VisionTransformer& model, const Datasets& data, const TrainConfig& cfg,
                const std::filesystem::path& out_dir, const TrainHooks& hooks) {
  return run_training(model, nullptr, data, cfg, out_dir, hooks);
}

std::vector<std::vector<Tensor>> teacher_attention(const vit::VisionTransformer& teacher,
                                                   const Tensor& image) {
  std::vector<std::vector<Tensor>> out;
  for (auto& layer : teacher.extract_all_attention(image)) out.push_back(std::move(layer.post));
  return out;
}

RunResult attention_transfer_train(const vit::VisionTransformer& teacher, vit::VisionTransformer& student,
                                   const Datasets& data, const TrainConfig& cfg,
                                   const std::filesystem::path& out_dir, const TrainHooks& hooks) {
  const auto& t = teacher.config();
  const auto& s = student.config();
  if (t.tokens() != s.tokens() || t.heads != s.heads || t.depth != s.depth) {
    throw ConfigError("teacher geometry (N=" + std::to_string(t.tokens()) + ", h=" + std::to_string(t.heads) +
                      ", L=" + std::to_string(t.depth) + ") does not match student (N=" +
                      std::to_string(s.tokens()) + ", h=" + std::to_string(s.heads) +
                      ", L=" + std::to_string(s.depth) + ")");
  }
  return run_training(student, &teacher, data, cfg, out_dir, hooks);
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace karat::train
