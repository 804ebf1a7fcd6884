#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "karat/dataset.hpp"
#include "karat/error.hpp"
#include "karat/harness.hpp"
#include "karat/optim.hpp"
#include "support.hpp"

using namespace karat;
using namespace karat::train;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("karat_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

vit::Parameter scalar_param(double value, bool decay = true) {
  return {"x", Tensor(Shape{1}, std::vector<double>{value}, true), decay};
}

// Micro model on 8x8 synthetic images, small enough for several epochs in a unit test.
TrainConfig micro_train(std::size_t train_size = 48, std::size_t epochs = 3) {
  TrainConfig cfg;
  cfg.data.train_size = train_size;
  cfg.data.test_size = 16;
  cfg.data.image_size = 8;
  cfg.data.classes = 3;
  cfg.batch_size = 8;
  cfg.epochs = epochs;
  cfg.warmup_epochs = 1;
  cfg.base_lr = 3e-3;
  return cfg;
}

}  // namespace

TEST(Schedule, WarmupStartEndpointsAndFinalValue) {
  const LrSchedule s{1e-3, 1e-6, 1e-5, 10};
  EXPECT_EQ(lr_at(0, 100, s), 1e-6);
  EXPECT_EQ(lr_at(10, 100, s), 1e-3);
  EXPECT_NEAR(lr_at(100, 100, s), 1e-5, 1e-18);
  EXPECT_NEAR(lr_at(5, 100, s), 1e-6 + 0.5 * (1e-3 - 1e-6), 1e-18);
  EXPECT_NEAR(lr_at(55, 100, s), 1e-5 + 0.5 * (1e-3 - 1e-5), 1e-15);
  EXPECT_THROW(lr_at(101, 100, s), ContractError);
}

TEST(Schedule, MonotoneDecayAfterWarmup) {
  const LrSchedule s{1e-3, 1e-6, 1e-5, 5};
  for (std::size_t k = 5; k < 50; ++k) EXPECT_GE(lr_at(k, 50, s), lr_at(k + 1, 50, s));
}

TEST(AdamW, ZeroGradientsWithoutDecayChangeNothing) {
  auto p = scalar_param(0.7);
  AdamW opt({p}, AdamWConfig{.weight_decay = 0.0});
  for (int i = 0; i < 10; ++i) {
    p.tensor.grad_buffer().assign(1, 0.0);
    opt.step(1e-2);
  }
  EXPECT_EQ(p.tensor.at(0), 0.7);
}

TEST(AdamW, ZeroGradientsWithDecayShrinkGeometrically) {
  auto p = scalar_param(0.7);
  AdamW opt({p}, AdamWConfig{.weight_decay = 0.1});
  double expect = 0.7;
  for (int i = 0; i < 20; ++i) {
    p.tensor.grad_buffer().assign(1, 0.0);
    opt.step(0.05);
    expect *= 1.0 - 0.05 * 0.1;
  }
  EXPECT_NEAR(p.tensor.at(0), expect, 1e-15);
}

TEST(AdamW, NoDecayFlagSkipsDecay) {
  auto p = scalar_param(0.7, false);
  AdamW opt({p}, AdamWConfig{.weight_decay = 0.5});
  p.tensor.grad_buffer().assign(1, 0.0);
  opt.step(0.1);
  EXPECT_EQ(p.tensor.at(0), 0.7);
}

TEST(AdamW, ConvergesOnScalarQuadratic) {
  auto p = scalar_param(1.0);
  AdamW opt({p}, AdamWConfig{.weight_decay = 0.0});
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    backward(scale(mul(p.tensor, p.tensor), 0.5));
    opt.step(0.05);
  }
  EXPECT_LT(std::abs(p.tensor.at(0)), 1e-2);
}

TEST(AdamW, NaNGradientNamesParameterAndLeavesValues) {
  auto a = scalar_param(1.0);
  vit::Parameter b{"blocks.0.attn.wv", Tensor(Shape{2}, std::vector<double>{1, 2}, true), true};
  AdamW opt({a, b});
  a.tensor.grad_buffer().assign(1, 0.5);
  b.tensor.grad_buffer() = {0.1, std::nan("")};
  try {
    opt.step(0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("blocks.0.attn.wv"), std::string::npos);
  }
  EXPECT_EQ(a.tensor.at(0), 1.0);
  EXPECT_EQ(b.tensor.at(1), 2.0);
}

TEST(Clipping, BoundsGlobalNorm) {
  auto a = scalar_param(1.0), b = scalar_param(2.0);
  std::vector<vit::Parameter> params{a, b};
  a.tensor.grad_buffer().assign(1, 3.0);
  b.tensor.grad_buffer().assign(1, 4.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(global_grad_norm(params), 1.0, 1e-15);
  EXPECT_NEAR(a.tensor.grad()[0], 0.6, 1e-15);
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 10.0), global_grad_norm(params));
}

TEST(Evaluate, ConstantPredictorOnBalancedTenClasses) {
  auto cfg = test_support::micro_config();
  cfg.classes = 10;
  vit::VisionTransformer model(cfg, 1);
  for (double& v : model.head_w.mutable_data()) v = 0.0;
  auto b = model.head_b.mutable_data();
  for (std::size_t c = 0; c < 10; ++c) b[c] = 10.0 - static_cast<double>(c);
  const auto ds = data::make_synthetic({100, 8, 10, 0.1, 2});
  const auto acc = evaluate(model, ds);
  EXPECT_EQ(acc.top1, 0.1);
  EXPECT_EQ(acc.top5, 0.5);
  EXPECT_EQ(acc.samples, 100u);
}

TEST(Evaluate, MatchesConfusionMatrixRecount) {
  auto cfg = test_support::micro_config();
  cfg.classes = 6;
  vit::VisionTransformer model(cfg, 3);
  test_support::randomize(model, 4);
  const auto ds = data::make_synthetic({100, 8, 6, 0.3, 5});
  std::vector<std::vector<int>> confusion(6, std::vector<int>(6, 0));
  std::size_t top5 = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto logits = model.forward(ds.images[i]).values();
    std::size_t best = 0;
    for (std::size_t c = 1; c < 6; ++c)
      if (logits[c] > logits[best]) best = c;
    ++confusion[ds.labels[i]][best];
    std::size_t above = 0;
    const auto y = static_cast<std::size_t>(ds.labels[i]);
    for (std::size_t c = 0; c < 6; ++c) above += logits[c] > logits[y] || (logits[c] == logits[y] && c < y);
    top5 += above < 5;
  }
  int diag = 0;
  for (int c = 0; c < 6; ++c) diag += confusion[c][c];
  const auto acc = evaluate(model, ds);
  EXPECT_EQ(acc.top1, diag / 100.0);
  EXPECT_EQ(acc.top5, static_cast<double>(top5) / 100.0);
  EXPECT_GE(acc.top5, acc.top1);
}

TEST(Evaluate, GeometryMismatchIsConfigError) {
  vit::VisionTransformer model(test_support::micro_config(), 6);
  Datasets data{data::make_synthetic({8, 16, 3, 0.1, 1}), {}};
  EXPECT_THROW(train::train(model, data, micro_train()), ConfigError);
}

TEST(Train, DeterministicLogsAndCheckpoints) {
  const auto cfg = micro_train();
  const auto data = load_datasets(cfg.data, cfg.seed);
  std::string logs[2], ckpts[2];
  for (int run = 0; run < 2; ++run) {
    vit::VisionTransformer model(test_support::micro_config(), 7);
    const auto dir = scratch_dir("det" + std::to_string(run));
    const auto res = train::train(model, data, cfg, dir);
    logs[run] = read_file(dir / "metrics.csv");
    ckpts[run] = read_file(dir / "checkpoints" / "final.ckpt");
    EXPECT_EQ(res.checkpoints.size(), cfg.epochs);
    EXPECT_TRUE(fs::exists(dir / "checkpoints" / "best.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "checkpoints" / "epoch_001.ckpt"));
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(ckpts[0], ckpts[1]);
  std::istringstream lines(logs[0]);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, kMetricsHeader);
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    EXPECT_EQ(line.substr(0, line.find(',')), std::to_string(rows));
  }
  EXPECT_EQ(rows, 3);
}

TEST(Train, ClippingHoldsAtEveryStepAndLossFinite) {
  auto cfg = micro_train(32, 2);
  cfg.grad_clip = 0.05;
  vit::VisionTransformer model(test_support::micro_config(), 8);
  std::size_t steps = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const StepInfo& info) {
    ++steps;
    EXPECT_TRUE(std::isfinite(info.loss));
    EXPECT_LE(info.clipped_grad_norm, cfg.grad_clip * (1 + 1e-12));
    if (info.grad_norm <= cfg.grad_clip) {
      EXPECT_DOUBLE_EQ(info.clipped_grad_norm, info.grad_norm);
    }
  };
  const auto res = train::train(model, load_datasets(cfg.data, cfg.seed), cfg, {}, hooks);
  EXPECT_EQ(steps, 8u);
  for (const auto& m : res.metrics) EXPECT_TRUE(std::isfinite(m.train_loss));
}

TEST(Train, NonFiniteLossNamesStep) {
  const auto cfg = micro_train(16, 2);
  vit::VisionTransformer model(test_support::micro_config(), 9);
  model.head_b.mutable_data()[0] = std::nan("");
  try {
    train::train(model, load_datasets(cfg.data, cfg.seed), cfg);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(Train, LearnsTinySyntheticTask) {
  auto cfg = micro_train(64, 8);
  cfg.data.classes = 3;
  vit::VisionTransformer model(test_support::micro_config(), 10);
  const auto res = train::train(model, load_datasets(cfg.data, cfg.seed), cfg);
  EXPECT_LT(res.metrics.back().train_loss, res.metrics.front().train_loss);
}

TEST(Config, ValidationMessagesNameKeys) {
  TrainConfig cfg;
  cfg.warmup_epochs = cfg.epochs;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.base_lr = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  DataConfig d;
  d.format = "idx";
  try {
    d.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("data.train_path"), std::string::npos);
  }
}

TEST(Transfer, SelfTransferReproducesForward) {
  vit::VisionTransformer model(test_support::micro_config(), 11);
  test_support::randomize(model, 12);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor img = test_support::random_tensor({8, 8, 1}, 13 + s);
    const auto attn = teacher_attention(model, img);
    vit::ForwardOptions opts;
    opts.attention_override = &attn;
    const auto a = model.forward(img).values(), b = model.forward(img, opts).values();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(Transfer, QueryAndKeyStayFrozen) {
  auto cfg = micro_train(80, 1);
  cfg.warmup_epochs = 0;
  vit::VisionTransformer teacher(test_support::micro_config(), 14);
  vit::VisionTransformer student(test_support::micro_config(), 15);
  std::vector<std::vector<double>> before;
  for (const auto& b : student.blocks) {
    for (const Tensor* t : {&b.attn.wq, &b.attn.bq, &b.attn.wk, &b.attn.bk}) before.push_back(t->values());
  }
  const auto wv = student.blocks[0].attn.wv.values();
  std::size_t steps = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const StepInfo&) { ++steps; };
  attention_transfer_train(teacher, student, load_datasets(cfg.data, cfg.seed), cfg, {}, hooks);
  EXPECT_EQ(steps, 10u);
  std::size_t i = 0;
  for (const auto& b : student.blocks) {
    for (const Tensor* t : {&b.attn.wq, &b.attn.bq, &b.attn.wk, &b.attn.bk}) EXPECT_EQ(t->values(), before[i++]);
  }
  EXPECT_NE(student.blocks[0].attn.wv.values(), wv);
}

TEST(Transfer, GeometryMismatchIsConfigError) {
  auto other = test_support::micro_config();
  other.depth = 3;
  vit::VisionTransformer teacher(other, 16), student(test_support::micro_config(), 17);
  const auto cfg = micro_train(16, 2);
  EXPECT_THROW(attention_transfer_train(teacher, student, load_datasets(cfg.data, cfg.seed), cfg), ConfigError);
}

TEST(Synthetic, DeterministicBalancedAndBounded) {
  const auto a = data::make_synthetic({60, 16, 3, 0.1, 5});
  const auto b = data::make_synthetic({60, 16, 3, 0.1, 5});
  ASSERT_EQ(a.size(), 60u);
  std::vector<int> counts(3, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.images[i].values(), b.images[i].values());
    EXPECT_EQ(a.images[i].shape(), (Shape{16, 16, 1}));
    ++counts[a.labels[i]];
  }
  EXPECT_EQ(counts, (std::vector<int>{20, 20, 20}));
  EXPECT_NE(data::make_synthetic({60, 16, 3, 0.1, 6}).images[0].values(), a.images[0].values());
}

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

}  // namespace

TEST(Idx, ParsesImagesAndLabels) {
  std::vector<std::uint8_t> images, labels;
  put_be32(images, 0x803);
  put_be32(images, 2);
  put_be32(images, 2);
  put_be32(images, 2);
  for (std::uint8_t v : {0, 255, 51, 102, 10, 20, 30, 40}) images.push_back(v);
  put_be32(labels, 0x801);
  put_be32(labels, 2);
  labels.push_back(3);
  labels.push_back(7);
  const auto ds = data::parse_idx(images, labels);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{3, 7}));
  EXPECT_EQ(ds.image_size, 2u);
  EXPECT_DOUBLE_EQ(ds.images[0].at(0), -0.5);
  EXPECT_DOUBLE_EQ(ds.images[0].at(1), 0.5);
  EXPECT_DOUBLE_EQ(ds.images[0].at(2), 51.0 / 255.0 - 0.5);
}

TEST(Idx, MalformedInputReportsOffset) {
  std::vector<std::uint8_t> images, labels;
  put_be32(images, 0x802);
  put_be32(labels, 0x801);
  try {
    data::parse_idx(images, labels);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 0"), std::string::npos);
  }
  images.clear();
  put_be32(images, 0x803);
  put_be32(images, 1);
  EXPECT_THROW(data::parse_idx(images, labels), FormatError);
}

TEST(Cifar, ConvertsPlanesToChannelLast) {
  std::vector<std::uint8_t> bytes(2 * 3073, 0);
  bytes[0] = 4;
  bytes[1] = 255;            // R at (0,0)
  bytes[1 + 1024] = 0;       // G at (0,0)
  bytes[1 + 2048 + 1] = 255;  // B at (0,1)
  bytes[3073] = 9;
  const auto ds = data::parse_cifar10(bytes);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{4, 9}));
  EXPECT_EQ(ds.images[0].shape(), (Shape{32, 32, 3}));
  EXPECT_DOUBLE_EQ(ds.images[0].at(0), 0.5);
  EXPECT_DOUBLE_EQ(ds.images[0].at(1), -0.5);
  EXPECT_DOUBLE_EQ(ds.images[0].at(5), 0.5);
  bytes.pop_back();
  EXPECT_THROW(data::parse_cifar10(bytes), FormatError);
  std::vector<std::uint8_t> bad(3073, 0);
  bad[0] = 10;
  EXPECT_THROW(data::parse_cifar10(bad), FormatError);
}
