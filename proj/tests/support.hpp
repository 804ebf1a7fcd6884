#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "karat/tensor.hpp"
#include "karat/vit.hpp"
#include "oracles.hpp"

namespace test_support {

inline std::vector<double> normal_values(std::size_t n, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline karat::Tensor random_tensor(karat::Shape shape, std::uint64_t seed, double stddev = 1.0,
                                   bool requires_grad = false) {
  const std::size_t n = karat::shape_size(shape);
  return karat::Tensor(std::move(shape), normal_values(n, seed, stddev), requires_grad);
}

/// 8x8 single-channel images, patch 4 (N = 5), d = 16, two heads, two blocks, three classes.
inline karat::vit::ViTConfig micro_config() {
  karat::vit::ViTConfig cfg;
  cfg.image_size = 8;
  cfg.channels = 1;
  cfg.patch_size = 4;
  cfg.embed_dim = 16;
  cfg.heads = 2;
  cfg.depth = 2;
  cfg.classes = 3;
  return cfg;
}

/// Re-draws every parameter from N(0, stddev) so gradients are not dominated
/// by the tiny default initialization.
inline void randomize(karat::vit::VisionTransformer& model, std::uint64_t seed, double stddev = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& p : model.parameters()) {
    for (double& v : p.tensor.mutable_data()) v = dist(rng);
  }
}

inline oracle::BlockWeights block_weights(const karat::vit::BlockParams& b, std::size_t d) {
  const std::size_t hidden = b.fc1_b.size();
  oracle::BlockWeights w;
  w.ln1_g = b.ln1_gamma.values();
  w.ln1_b = b.ln1_beta.values();
  w.wq = oracle::from_flat(b.attn.wq.values(), d, d);
  w.wk = oracle::from_flat(b.attn.wk.values(), d, d);
  w.wv = oracle::from_flat(b.attn.wv.values(), d, d);
  w.wo = oracle::from_flat(b.attn.wo.values(), d, d);
  w.bq = b.attn.bq.values();
  w.bk = b.attn.bk.values();
  w.bv = b.attn.bv.values();
  w.bo = b.attn.bo.values();
  w.ln2_g = b.ln2_gamma.values();
  w.ln2_b = b.ln2_beta.values();
  w.fc1 = oracle::from_flat(b.fc1_w.values(), d, hidden);
  w.fc2 = oracle::from_flat(b.fc2_w.values(), hidden, d);
  w.fc1_b = b.fc1_b.values();
  w.fc2_b = b.fc2_b.values();
  return w;
}

/// Softmax ViT logits composed from the scalar oracles, with patches cut by
/// explicit index arithmetic.
inline std::vector<double> oracle_logits(const karat::vit::VisionTransformer& model, const karat::Tensor& image) {
  const auto& cfg = model.config();
  const std::size_t s = cfg.image_size, c = cfg.channels, p = cfg.patch_size, d = cfg.embed_dim;
  const std::size_t per_side = s / p;
  oracle::Mat patches;
  for (std::size_t pr = 0; pr < per_side; ++pr) {
    for (std::size_t pc = 0; pc < per_side; ++pc) {
      std::vector<double> row;
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j)
          for (std::size_t ch = 0; ch < c; ++ch) row.push_back(image.at(((pr * p + i) * s + pc * p + j) * c + ch));
      patches.push_back(row);
    }
  }
  oracle::Mat x = oracle::add_bias(
      oracle::matmul(patches, oracle::from_flat(model.patch_w.values(), p * p * c, d)), model.patch_b.values());
  x.insert(x.begin(), model.cls_token.values());
  const auto pos = oracle::from_flat(model.pos_embed.values(), x.size(), d);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] += pos[i][j];
  for (const auto& b : model.blocks) x = oracle::encoder_block(x, block_weights(b, d), cfg.heads);
  const auto normed = oracle::layer_norm({x[0]}, model.norm_gamma.values(), model.norm_beta.values(), 1e-6);
  return oracle::to_flat(oracle::add_bias(
      oracle::matmul(normed, oracle::from_flat(model.head_w.values(), d, cfg.classes)), model.head_b.values()));
}

}  // namespace test_support
