#include "karat/vit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "karat/error.hpp"
#include "karat/ops.hpp"

namespace karat::vit {

namespace {

constexpr double kInitStd = 0.02;

Tensor trunc_normal(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, kInitStd);
  Tensor t(std::move(shape), 0.0, true);
  for (double& v : t.mutable_data()) {
    double draw;
    do {
      draw = normal(rng);
    } while (std::abs(draw) > 2.0 * kInitStd);
    v = draw;
  }
  return t;
}

Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0, true); }
Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0, true); }

std::string operator_prefix(const ViTConfig& cfg, std::size_t layer, std::size_t head) {
  if (cfg.karat.sharing == attention::Sharing::Universal) return "karat.H" + std::to_string(head);
  return "karat.L" + std::to_string(layer) + ".H" + std::to_string(head);
}

}  // namespace

std::size_t ViTConfig::tokens() const {
  const std::size_t per_side = image_size / patch_size;
  return per_side * per_side + 1;
}

attention::HeadActivation ViTConfig::head_activation(std::size_t head) const {
  return use_karat ? karat.head(head) : attention::HeadActivation::Softmax;
}

void ViTConfig::validate() const {
  if (image_size == 0 || channels == 0 || patch_size == 0 || embed_dim == 0 || heads == 0 ||
      depth == 0 || classes == 0 || mlp_ratio == 0) {
    throw ConfigError("model geometry values must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ConfigError("patch size " + std::to_string(patch_size) + " does not divide image size " +
                      std::to_string(image_size));
  }
  if (embed_dim % heads != 0) {
    throw ConfigError("heads " + std::to_string(heads) + " do not divide embed dim " +
                      std::to_string(embed_dim));
  }
  if (use_karat) karat.validate(tokens(), heads);
}

ViTConfig preset(const std::string& name) {
  ViTConfig cfg;
  if (name == "vit-micro") {
    cfg.embed_dim = 64, cfg.heads = 2, cfg.depth = 4;
  } else if (name == "vit-mini") {
    cfg.embed_dim = 128, cfg.heads = 4, cfg.depth = 6;
  } else if (name == "vit-tiny" || name == "vit-small" || name == "vit-base") {
    cfg.image_size = 224, cfg.channels = 3, cfg.patch_size = 16, cfg.depth = 12, cfg.classes = 1000;
    // Class counts follow the reference totals these geometries are compared
    // against: the Tiny and Base figures carry a 10-way head, Small a 1000-way one.
    if (name == "vit-tiny") cfg.embed_dim = 192, cfg.heads = 3, cfg.classes = 10;
    if (name == "vit-small") cfg.embed_dim = 384, cfg.heads = 6;
    if (name == "vit-base") cfg.embed_dim = 768, cfg.heads = 12, cfg.classes = 10;
  } else {
    throw ConfigError("unknown model preset '" + name +
                      "' (vit-micro|vit-mini|vit-tiny|vit-small|vit-base)");
  }
  return cfg;
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3) {
    throw DimensionError("patchify expects H x W x C, got " + shape_string(image.shape()));
  }
  const std::size_t h = image.shape()[0], w = image.shape()[1], c = image.shape()[2];
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ConfigError("patch size " + std::to_string(patch) + " does not divide image " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t ph = h / patch, pw = w / patch, row_len = patch * patch * c;
  std::vector<double> out(ph * pw * row_len);
  const auto src = image.data();
  for (std::size_t bi = 0; bi < ph; ++bi) {
    for (std::size_t bj = 0; bj < pw; ++bj) {
      double* dst = out.data() + (bi * pw + bj) * row_len;
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            *dst++ = src[((bi * patch + y) * w + (bj * patch + x)) * c + ch];
          }
        }
      }
    }
  }
  return Tensor(Shape{ph * pw, row_len}, std::move(out));
}

Tensor encoder_block_forward(const Tensor& x, const BlockParams& block, const ViTConfig& cfg,
                             const HeadOperators& ops, const std::vector<Tensor>* attention_override,
                             BlockTrace* trace) {
  const std::size_t dh = cfg.head_dim();
  Tensor h = layer_norm(x, block.ln1_gamma, block.ln1_beta);
  Tensor v = add_bias(matmul(h, block.attn.wv), block.attn.bv);
  Tensor q, k;
  if (attention_override == nullptr) {
    q = add_bias(matmul(h, block.attn.wq), block.attn.bq);
    k = add_bias(matmul(h, block.attn.wk), block.attn.bk);
  } else if (attention_override->size() != cfg.heads) {
    throw DimensionError("attention override needs one matrix per head");
  }
  if (trace) trace->heads.assign(cfg.heads, {});

  std::vector<Tensor> heads;
  heads.reserve(cfg.heads);
  for (std::size_t i = 0; i < cfg.heads; ++i) {
    Tensor vi = slice_cols(v, i * dh, dh);
    if (attention_override) {
      heads.push_back(matmul((*attention_override)[i], vi));
      if (trace) trace->heads[i].post = (*attention_override)[i];
      continue;
    }
    heads.push_back(attention::attention_head_forward(
        slice_cols(q, i * dh, dh), slice_cols(k, i * dh, dh), vi, cfg.head_activation(i),
        cfg.karat, i < ops.size() ? ops[i].get() : nullptr, trace ? &trace->heads[i] : nullptr));
  }
  Tensor mixed = cfg.heads == 1 ? heads[0] : concat_cols(heads);
  Tensor out = add(x, add_bias(matmul(mixed, block.attn.wo), block.attn.bo));

  Tensor h2 = layer_norm(out, block.ln2_gamma, block.ln2_beta);
  Tensor hidden = gelu(add_bias(matmul(h2, block.fc1_w), block.fc1_b));
  return add(out, add_bias(matmul(hidden, block.fc2_w), block.fc2_b));
}

VisionTransformer::VisionTransformer(ViTConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg_.embed_dim, n = cfg_.tokens();
  const std::size_t patch_len = cfg_.patch_size * cfg_.patch_size * cfg_.channels;
  const std::size_t hidden = cfg_.mlp_ratio * d;

  patch_w = trunc_normal({patch_len, d}, rng);
  patch_b = zeros({d});
  cls_token = trunc_normal({1, d}, rng);
  pos_embed = trunc_normal({n, d}, rng);
  blocks.resize(cfg_.depth);
  for (auto& b : blocks) {
    b.ln1_gamma = ones({d});
    b.ln1_beta = zeros({d});
    b.attn.wq = trunc_normal({d, d}, rng);
    b.attn.bq = zeros({d});
    b.attn.wk = trunc_normal({d, d}, rng);
    b.attn.bk = zeros({d});
    b.attn.wv = trunc_normal({d, d}, rng);
    b.attn.bv = zeros({d});
    b.attn.wo = trunc_normal({d, d}, rng);
    b.attn.bo = zeros({d});
    b.ln2_gamma = ones({d});
    b.ln2_beta = zeros({d});
    b.fc1_w = trunc_normal({d, hidden}, rng);
    b.fc1_b = zeros({hidden});
    b.fc2_w = trunc_normal({hidden, d}, rng);
    b.fc2_b = zeros({d});
  }
  norm_gamma = ones({d});
  norm_beta = zeros({d});
  head_w = trunc_normal({d, cfg_.classes}, rng);
  head_b = zeros({cfg_.classes});

  if (cfg_.use_karat) {
    operators = attention::make_shared_params(cfg_.karat, n, cfg_.heads, cfg_.depth, rng);
  } else {
    operators.by_layer.assign(cfg_.depth, HeadOperators(cfg_.heads));
  }
}

Tensor VisionTransformer::forward(const Tensor& image, const ForwardOptions& options) const {
  if (image.rank() != 3 || image.shape()[0] != cfg_.image_size ||
      image.shape()[1] != cfg_.image_size || image.shape()[2] != cfg_.channels) {
    throw DimensionError("image shape " + shape_string(image.shape()) + " does not match model geometry");
  }
  Tensor patches = patchify(image, cfg_.patch_size);
  Tensor x = add_bias(matmul(patches, patch_w), patch_b);
  x = add(concat_rows({cls_token, x}), pos_embed);
  if (options.trace) options.trace->assign(cfg_.depth, {});
  for (std::size_t j = 0; j < cfg_.depth; ++j) {
    const std::vector<Tensor>* override_j =
        options.attention_override ? &(*options.attention_override)[j] : nullptr;
    x = encoder_block_forward(x, blocks[j], cfg_, operators.by_layer[j], override_j,
                              options.trace ? &(*options.trace)[j] : nullptr);
  }
  Tensor cls = slice_rows(layer_norm(x, norm_gamma, norm_beta), 0, 1);
  return add_bias(matmul(cls, head_w), head_b);
}

std::vector<ExtractedAttention> VisionTransformer::extract_all_attention(const Tensor& image) const {
  NoGradGuard no_grad;
  std::vector<BlockTrace> trace;
  ForwardOptions opts;
  opts.trace = &trace;
  forward(image, opts);
  std::vector<ExtractedAttention> out(cfg_.depth);
  for (std::size_t j = 0; j < cfg_.depth; ++j) {
    for (const auto& head : trace[j].heads) {
      out[j].pre.push_back(head.pre);
      out[j].post.push_back(head.post);
    }
  }
  return out;
}

ExtractedAttention VisionTransformer::extract_attention(const Tensor& image, std::size_t layer) const {
  if (layer >= cfg_.depth) {
    throw ConfigError("layer " + std::to_string(layer) + " out of range (depth " +
                      std::to_string(cfg_.depth) + ")");
  }
  return extract_all_attention(image)[layer];
}

std::vector<NamedTensor> attention_entries(const std::vector<ExtractedAttention>& layers) {
  std::vector<NamedTensor> out;
  for (std::size_t j = 0; j < layers.size(); ++j) {
    const std::string suffix = "/L" + std::to_string(j) + "/H";
    for (std::size_t i = 0; i < layers[j].pre.size(); ++i) {
      out.push_back({"attn/pre" + suffix + std::to_string(i), layers[j].pre[i]});
      out.push_back({"attn/post" + suffix + std::to_string(i), layers[j].post[i]});
    }
  }
  return out;
}

std::vector<Parameter> VisionTransformer::parameters() const {
  std::vector<Parameter> out;
  out.push_back({"patch_embed.weight", patch_w, true});
  out.push_back({"patch_embed.bias", patch_b, false});
  out.push_back({"cls_token", cls_token, false});
  out.push_back({"pos_embed", pos_embed, false});
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    const auto& b = blocks[j];
    const std::string p = "blocks." + std::to_string(j) + ".";
    out.push_back({p + "ln1.gamma", b.ln1_gamma, false});
    out.push_back({p + "ln1.beta", b.ln1_beta, false});
    out.push_back({p + "attn.wq", b.attn.wq, true});
    out.push_back({p + "attn.bq", b.attn.bq, false});
    out.push_back({p + "attn.wk", b.attn.wk, true});
    out.push_back({p + "attn.bk", b.attn.bk, false});
    out.push_back({p + "attn.wv", b.attn.wv, true});
    out.push_back({p + "attn.bv", b.attn.bv, false});
    out.push_back({p + "attn.wo", b.attn.wo, true});
    out.push_back({p + "attn.bo", b.attn.bo, false});
    out.push_back({p + "ln2.gamma", b.ln2_gamma, false});
    out.push_back({p + "ln2.beta", b.ln2_beta, false});
    out.push_back({p + "mlp.fc1.weight", b.fc1_w, true});
    out.push_back({p + "mlp.fc1.bias", b.fc1_b, false});
    out.push_back({p + "mlp.fc2.weight", b.fc2_w, true});
    out.push_back({p + "mlp.fc2.bias", b.fc2_b, false});
  }
  out.push_back({"norm.gamma", norm_gamma, false});
  out.push_back({"norm.beta", norm_beta, false});
  out.push_back({"head.weight", head_w, true});
  out.push_back({"head.bias", head_b, false});

  std::vector<const attention::OperatorParams*> seen;
  for (std::size_t j = 0; j < operators.by_layer.size(); ++j) {
    for (std::size_t i = 0; i < operators.by_layer[j].size(); ++i) {
      const auto* op = operators.by_layer[j][i].get();
      if (!op || std::find(seen.begin(), seen.end(), op) != seen.end()) continue;
      seen.push_back(op);
      const bool unit_decay = !cfg_.karat.basis.is_wavelet();
      for (auto& nt : op->named(operator_prefix(cfg_, j, i))) {
        const bool is_units = nt.tensor.rank() == 3;
        out.push_back({nt.name, nt.tensor, is_units ? unit_decay : true});
      }
    }
  }
  return out;
}

std::size_t VisionTransformer::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

std::size_t VisionTransformer::activation_parameter_count() const {
  std::size_t n = 0;
  for (const auto& op : operators.unique()) n += op->parameter_count();
  return n;
}

Tensor geometry_tensor(const ViTConfig& cfg) {
  return Tensor(Shape{8}, std::vector<double>{
                              static_cast<double>(cfg.image_size), static_cast<double>(cfg.channels),
                              static_cast<double>(cfg.patch_size), static_cast<double>(cfg.embed_dim),
                              static_cast<double>(cfg.heads), static_cast<double>(cfg.depth),
                              static_cast<double>(cfg.classes), static_cast<double>(cfg.mlp_ratio)});
}

std::vector<NamedTensor> VisionTransformer::state() const {
  std::vector<NamedTensor> out;
  out.push_back({"meta.geometry", geometry_tensor(cfg_)});
  for (const auto& p : parameters()) out.push_back({p.name, p.tensor});
  return out;
}

void VisionTransformer::load_state(const std::vector<NamedTensor>& entries) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e.tensor;
  const auto geo = by_name.find("meta.geometry");
  if (geo == by_name.end()) throw ConfigError("checkpoint lacks meta.geometry");
  if (geo->second->values() != geometry_tensor(cfg_).values()) {
    throw ConfigError("checkpoint geometry does not match model configuration");
  }
  for (auto& p : parameters()) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ConfigError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape()) {
      throw ConfigError("parameter '" + p.name + "' has shape " + shape_string(it->second->shape()) +
                        ", model expects " + shape_string(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    std::copy(it->second->data().begin(), it->second->data().end(), dst.begin());
  }
}

std::vector<double> VisionTransformer::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& p : parameters()) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void VisionTransformer::unflatten(std::span<const double> values) {
  std::size_t offset = 0;
  for (auto& p : parameters()) {
    auto dst = p.tensor.mutable_data();
    if (offset + dst.size() > values.size()) throw DimensionError("unflatten: too few values");
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(offset),
              values.begin() + static_cast<std::ptrdiff_t>(offset + dst.size()), dst.begin());
    offset += dst.size();
  }
  if (offset != values.size()) throw DimensionError("unflatten: too many values");
}

VisionTransformer VisionTransformer::clone() const {
  VisionTransformer copy;
  copy.cfg_ = cfg_;
  auto c = [](const Tensor& t) { return t.defined() ? t.clone() : Tensor(); };
  copy.patch_w = c(patch_w);
  copy.patch_b = c(patch_b);
  copy.cls_token = c(cls_token);
  copy.pos_embed = c(pos_embed);
  copy.blocks.reserve(blocks.size());
  for (const auto& b : blocks) {
    BlockParams nb;
    nb.ln1_gamma = c(b.ln1_gamma);
    nb.ln1_beta = c(b.ln1_beta);
    nb.attn = {c(b.attn.wq), c(b.attn.bq), c(b.attn.wk), c(b.attn.bk),
               c(b.attn.wv), c(b.attn.bv), c(b.attn.wo), c(b.attn.bo)};
    nb.ln2_gamma = c(b.ln2_gamma);
    nb.ln2_beta = c(b.ln2_beta);
    nb.fc1_w = c(b.fc1_w);
    nb.fc1_b = c(b.fc1_b);
    nb.fc2_w = c(b.fc2_w);
    nb.fc2_b = c(b.fc2_b);
    copy.blocks.push_back(std::move(nb));
  }
  copy.norm_gamma = c(norm_gamma);
  copy.norm_beta = c(norm_beta);
  copy.head_w = c(head_w);
  copy.head_b = c(head_b);

  std::map<const attention::OperatorParams*, std::shared_ptr<attention::OperatorParams>> remap;
  copy.operators.by_layer.resize(operators.by_layer.size());
  for (std::size_t j = 0; j < operators.by_layer.size(); ++j) {
    for (const auto& op : operators.by_layer[j]) {
      if (!op) {
        copy.operators.by_layer[j].push_back(nullptr);
        continue;
      }
      auto& mapped = remap[op.get()];
      if (!mapped) {
        mapped = std::make_shared<attention::OperatorParams>(
            attention::OperatorParams{c(op->phi1), c(op->projector), c(op->phi2)});
      }
      copy.operators.by_layer[j].push_back(mapped);
    }
  }
  return copy;
}

void VisionTransformer::enforce_constraints() {
  if (!cfg_.use_karat) return;
  for (const auto& op : operators.unique()) {
    basis::enforce_constraints(cfg_.karat.basis, op->phi1.mutable_data());
    if (op->phi2.defined()) basis::enforce_constraints(cfg_.karat.basis, op->phi2.mutable_data());
  }
}

}  // namespace karat::vit
