#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "karat/checkpoint.hpp"
#include "karat/karat_attention.hpp"
#include "karat/tensor.hpp"

namespace karat::vit {

struct ViTConfig {
  std::size_t image_size = 16;
  std::size_t channels = 1;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 64;
  std::size_t heads = 2;
  std::size_t depth = 4;
  std::size_t classes = 2;
  std::size_t mlp_ratio = 4;
  // When false every head uses softmax and `karat` is ignored.
  bool use_karat = false;
  attention::KArAtConfig karat;

  /// Patches plus the class token.
  std::size_t tokens() const;
  std::size_t head_dim() const { return embed_dim / heads; }
  attention::HeadActivation head_activation(std::size_t head) const;
  void validate() const;
};

/// Named geometries: vit-micro, vit-mini (desk scale); vit-tiny, vit-small,
/// vit-base (224x224 RGB, patch 16).
ViTConfig preset(const std::string& name);

/// Splits an H x W x C image (channel-last) into non-overlapping p x p
/// patches in row-major patch order; each row is one patch flattened as
/// (row, col, channel). Throws ConfigError when p does not divide H and W.
Tensor patchify(const Tensor& image, std::size_t patch);

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct BlockParams {
  Tensor ln1_gamma, ln1_beta;
  AttentionWeights attn;
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

struct Parameter {
  std::string name;
  Tensor tensor;
  bool decay = true;
};

/// Pre- and post-activation attention for every head of one block.
struct BlockTrace {
  std::vector<attention::HeadTrace> heads;
};

using HeadOperators = std::vector<std::shared_ptr<attention::OperatorParams>>;

/// Pre-norm encoder block: X + MHSA(LN(X)), then + MLP(LN(.)).
///
/// When `attention_override` is non-null its h matrices replace each head's
/// activated attention (query/key are not evaluated).
Tensor encoder_block_forward(const Tensor& x, const BlockParams& block, const ViTConfig& cfg,
                             const HeadOperators& ops,
                             const std::vector<Tensor>* attention_override = nullptr,
                             BlockTrace* trace = nullptr);

struct ForwardOptions {
  // [layer][head] attention matrices substituted for the model's own.
  const std::vector<std::vector<Tensor>>* attention_override = nullptr;
  // Filled with one entry per block when non-null.
  std::vector<BlockTrace>* trace = nullptr;
};

struct ExtractedAttention {
  std::vector<Tensor> pre;   // h tensors, N x N
  std::vector<Tensor> post;  // h tensors, N x N
};

class VisionTransformer {
 public:
  VisionTransformer(ViTConfig cfg, std::uint64_t seed);

  const ViTConfig& config() const { return cfg_; }

  /// Logits (1 x classes) for one H x W x C image.
  Tensor forward(const Tensor& image, const ForwardOptions& options = {}) const;

  ExtractedAttention extract_attention(const Tensor& image, std::size_t layer) const;
  /// All layers at once: [layer] -> per-head pre/post.
  std::vector<ExtractedAttention> extract_all_attention(const Tensor& image) const;

  /// Distinct trainable tensors in a fixed order; shared operators appear once.
  std::vector<Parameter> parameters() const;
  std::size_t parameter_count() const;
  std::size_t activation_parameter_count() const;

  /// Parameters plus a geometry record, ready for the checkpoint format.
  std::vector<NamedTensor> state() const;
  /// Copies values in; throws ConfigError on geometry or shape mismatch.
  void load_state(const std::vector<NamedTensor>& entries);

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);

  /// Deep copy; operator aliasing across layers is preserved.
  VisionTransformer clone() const;

  /// Re-applies basis parameter constraints after an optimizer step.
  void enforce_constraints();

  Tensor patch_w, patch_b, cls_token, pos_embed;
  std::vector<BlockParams> blocks;
  Tensor norm_gamma, norm_beta, head_w, head_b;
  attention::SharedOperators operators;

 private:
  VisionTransformer() = default;
  ViTConfig cfg_;
};

/// Named entries "attn/pre/L{j}/H{i}" and "attn/post/L{j}/H{i}" for a
/// checkpoint-format dump of every layer's attention.
std::vector<NamedTensor> attention_entries(const std::vector<ExtractedAttention>& layers);

/// Geometry record stored as "meta.geometry" in checkpoints.
Tensor geometry_tensor(const ViTConfig& cfg);

}  // namespace karat::vit
