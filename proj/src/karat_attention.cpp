#include "karat/karat_attention.hpp"

#include <algorithm>
#include <cmath>

#include "karat/error.hpp"

namespace karat::attention {

std::string to_string(Layout layout) {
  switch (layout) {
    case Layout::FullRank: return "full";
    case Layout::PhiThenW: return "phi_w";
    case Layout::WThenPhi: return "w_phi";
    case Layout::PhiPhi: return "phi_phi";
  }
  return "?";
}

std::string to_string(Sharing sharing) {
  return sharing == Sharing::Blockwise ? "blockwise" : "universal";
}

std::string to_string(HeadActivation activation) {
  return activation == HeadActivation::Softmax ? "softmax" : "karat";
}

Layout parse_layout(const std::string& name) {
  for (Layout l : {Layout::FullRank, Layout::PhiThenW, Layout::WThenPhi, Layout::PhiPhi}) {
    if (to_string(l) == name) return l;
  }
  throw ConfigError("unknown operator layout '" + name + "' (full|phi_w|w_phi|phi_phi)");
}

Sharing parse_sharing(const std::string& name) {
  if (name == "blockwise") return Sharing::Blockwise;
  if (name == "universal") return Sharing::Universal;
  throw ConfigError("unknown sharing mode '" + name + "' (blockwise|universal)");
}

HeadActivation parse_head_activation(const std::string& name) {
  if (name == "softmax") return HeadActivation::Softmax;
  if (name == "karat") return HeadActivation::KArAt;
  throw ConfigError("unknown head activation '" + name + "' (softmax|karat)");
}

void KArAtConfig::validate(std::size_t tokens, std::size_t heads) const {
  basis.validate();
  if (!head_assignment.empty() && head_assignment.size() != heads) {
    throw ConfigError("head assignment lists " + std::to_string(head_assignment.size()) +
                      " heads, model has " + std::to_string(heads));
  }
  // Rank only matters when some head owns an operator.
  if (karat_heads(heads) > 0 && layout != Layout::FullRank &&
      (rank < 1 || static_cast<std::size_t>(rank) > tokens)) {
    throw ConfigError("attention rank " + std::to_string(rank) + " must lie in [1, " +
                      std::to_string(tokens) + "]");
  }
  if (!std::isfinite(input_scale)) throw ConfigError("attention input_scale must be finite");
}

HeadActivation KArAtConfig::head(std::size_t index) const {
  return head_assignment.empty() ? HeadActivation::KArAt : head_assignment.at(index);
}

std::size_t KArAtConfig::karat_heads(std::size_t heads) const {
  if (head_assignment.empty()) return heads;
  return static_cast<std::size_t>(
      std::count(head_assignment.begin(), head_assignment.end(), HeadActivation::KArAt));
}

std::vector<NamedTensor> OperatorParams::named(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  out.push_back({prefix + ".phi1", phi1});
  if (projector.defined()) out.push_back({prefix + ".w", projector});
  if (phi2.defined()) out.push_back({prefix + ".phi2", phi2});
  return out;
}

std::size_t OperatorParams::parameter_count() const {
  std::size_t n = phi1.size();
  if (projector.defined()) n += projector.size();
  if (phi2.defined()) n += phi2.size();
  return n;
}

namespace {

Tensor init_units(const basis::BasisSpec& spec, std::size_t rows, std::size_t cols,
                  std::mt19937_64& rng) {
  const std::size_t np = spec.params_per_unit();
  Tensor t(Shape{rows, cols, np}, 0.0, true);
  auto data = t.mutable_data();
  for (std::size_t u = 0; u < rows * cols; ++u) basis::init_unit(spec, rng, data.subspan(u * np, np));
  return t;
}

Tensor init_projector(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
  Tensor t(Shape{rows, cols}, 0.0, true);
  for (double& v : t.mutable_data()) v = normal(rng);
  return t;
}

}  // namespace

OperatorParams init_operator(const KArAtConfig& cfg, std::size_t tokens, std::mt19937_64& rng) {
  const auto r = static_cast<std::size_t>(cfg.rank);
  OperatorParams p;
  switch (cfg.layout) {
    case Layout::FullRank:
      p.phi1 = init_units(cfg.basis, tokens, tokens, rng);
      break;
    case Layout::PhiThenW:
      p.phi1 = init_units(cfg.basis, r, tokens, rng);
      p.projector = init_projector(tokens, r, rng);
      break;
    case Layout::WThenPhi:
      p.projector = init_projector(r, tokens, rng);
      p.phi1 = init_units(cfg.basis, tokens, r, rng);
      break;
    case Layout::PhiPhi:
      p.phi1 = init_units(cfg.basis, r, tokens, rng);
      p.phi2 = init_units(cfg.basis, tokens, r, rng);
      break;
  }
  return p;
}

std::vector<double> apply_operator(const basis::BasisSpec& spec, const Tensor& coeffs,
                                   std::span<const double> a_row) {
  NoGradGuard no_grad;
  Tensor row = Tensor::matrix(1, a_row.size(), std::vector<double>(a_row.begin(), a_row.end()));
  Tensor out = basis_operator(row, coeffs, spec);
  return out.values();
}

Tensor karat_activate(const Tensor& logits, const KArAtConfig& cfg, const OperatorParams& params) {
  if (logits.rank() != 2 || logits.rows() != logits.cols()) {
    throw DimensionError("karat_activate expects a square attention matrix, got " +
                         shape_string(logits.shape()));
  }
  const std::size_t n = logits.rows();
  if (cfg.layout != Layout::FullRank && static_cast<std::size_t>(cfg.rank) > n) {
    throw ConfigError("attention rank " + std::to_string(cfg.rank) + " exceeds token count " +
                      std::to_string(n));
  }
  const Tensor x = cfg.input_scale == 1.0 ? logits : scale(logits, cfg.input_scale);
  Tensor y;
  switch (cfg.layout) {
    case Layout::FullRank:
      y = basis_operator(x, params.phi1, cfg.basis);
      break;
    case Layout::PhiThenW:
      // row k: W * PhiHat(x_k), i.e. Z W^T with Z = PhiHat(X) (N x r)
      y = matmul_nt(basis_operator(x, params.phi1, cfg.basis), params.projector);
      break;
    case Layout::WThenPhi:
      y = basis_operator(matmul_nt(x, params.projector), params.phi1, cfg.basis);
      break;
    case Layout::PhiPhi:
      y = basis_operator(basis_operator(x, params.phi1, cfg.basis), params.phi2, cfg.basis);
      break;
  }
  if (y.cols() != n) {
    throw DimensionError("operator maps " + std::to_string(n) + " tokens to " +
                         std::to_string(y.cols()) + " outputs");
  }
  return cfg.project_simplex ? project_rows(y, cfg.projection_grad) : y;
}

Tensor attention_head_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                              HeadActivation activation, const KArAtConfig& cfg,
                              const OperatorParams* params, HeadTrace* trace) {
  if (q.rank() != 2 || k.rank() != 2 || q.shape() != k.shape() || v.rows() != k.rows()) {
    throw DimensionError("attention head: incompatible Q/K/V shapes " + shape_string(q.shape()) +
                         ", " + shape_string(k.shape()) + ", " + shape_string(v.shape()));
  }
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor logits = scale(matmul_nt(q, k), inv_sqrt_dh);
  Tensor weights;
  if (activation == HeadActivation::Softmax) {
    weights = softmax_rows(logits);
  } else {
    if (params == nullptr) throw ContractError("KArAt head without operator parameters");
    weights = karat_activate(logits, cfg, *params);
  }
  if (trace) {
    trace->pre = logits;
    trace->post = weights;
  }
  return matmul(weights, v);
}

std::vector<std::shared_ptr<OperatorParams>> SharedOperators::unique() const {
  std::vector<std::shared_ptr<OperatorParams>> out;
  for (const auto& layer : by_layer) {
    for (const auto& op : layer) {
      if (op && std::find(out.begin(), out.end(), op) == out.end()) out.push_back(op);
    }
  }
  return out;
}

SharedOperators make_shared_params(const KArAtConfig& cfg, std::size_t tokens, std::size_t heads,
                                   std::size_t layers, std::mt19937_64& rng) {
  SharedOperators ops;
  ops.by_layer.assign(layers, std::vector<std::shared_ptr<OperatorParams>>(heads));
  for (std::size_t j = 0; j < layers; ++j) {
    for (std::size_t i = 0; i < heads; ++i) {
      if (cfg.head(i) != HeadActivation::KArAt) continue;
      if (cfg.sharing == Sharing::Universal && j > 0) {
        ops.by_layer[j][i] = ops.by_layer[0][i];
      } else {
        ops.by_layer[j][i] = std::make_shared<OperatorParams>(init_operator(cfg, tokens, rng));
      }
    }
  }
  return ops;
}

SharedOperators make_shared_params(const KArAtConfig& cfg, std::size_t tokens, std::size_t heads,
                                   std::size_t layers, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return make_shared_params(cfg, tokens, heads, layers, rng);
}

std::size_t operator_param_count(const KArAtConfig& cfg, std::size_t tokens) {
  const std::size_t np = cfg.basis.params_per_unit();
  const auto r = static_cast<std::size_t>(cfg.rank);
  const std::size_t n = tokens;
  switch (cfg.layout) {
    case Layout::FullRank: return n * n * np;
    case Layout::PhiThenW: return r * n * np + n * r;
    case Layout::WThenPhi: return r * n + n * r * np;
    case Layout::PhiPhi: return 2 * r * n * np;
  }
  return 0;
}

std::size_t count_activation_params(const KArAtConfig& cfg, std::size_t tokens, std::size_t heads,
                                    std::size_t layers) {
  const std::size_t operators =
      cfg.karat_heads(heads) * (cfg.sharing == Sharing::Blockwise ? layers : 1);
  return operators * operator_param_count(cfg, tokens);
}

}  // namespace karat::attention
