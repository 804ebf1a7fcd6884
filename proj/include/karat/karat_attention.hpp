#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "karat/basis.hpp"
#include "karat/checkpoint.hpp"
#include "karat/ops.hpp"
#include "karat/tensor.hpp"

namespace karat::attention {

/// How the learnable operator maps a row of N attention logits to N outputs.
enum class Layout {
  FullRank,  // Phi in N x N units
  PhiThenW,  // W * PhiHat(a): PhiHat r x N units, W in N x r
  WThenPhi,  // PhiHat(W * a): W in r x N, PhiHat N x r units
  PhiPhi,    // PhiHat2(PhiHat1(a)): r x N units, then N x r units
};

enum class Sharing { Blockwise, Universal };

enum class HeadActivation { Softmax, KArAt };

std::string to_string(Layout layout);
std::string to_string(Sharing sharing);
std::string to_string(HeadActivation activation);
Layout parse_layout(const std::string& name);
Sharing parse_sharing(const std::string& name);
HeadActivation parse_head_activation(const std::string& name);

struct KArAtConfig {
  basis::BasisSpec basis;
  int rank = 12;
  Layout layout = Layout::PhiThenW;
  Sharing sharing = Sharing::Blockwise;
  bool project_simplex = false;
  ProjectionGrad projection_grad = ProjectionGrad::StraightThrough;
  // Multiplies attention logits before they reach the units.
  double input_scale = 1.0;
  // One entry per head; empty means every head uses KArAt.
  std::vector<HeadActivation> head_assignment;

  /// Throws ConfigError for an invalid basis, rank outside [1, tokens] on a
  /// low-rank layout, or a head assignment whose length is not `heads`.
  void validate(std::size_t tokens, std::size_t heads) const;
  HeadActivation head(std::size_t index) const;
  std::size_t karat_heads(std::size_t heads) const;
};

/// Learnable parameters of one head's operator. Coefficient tensors are
/// (rows, cols, params_per_unit).
struct OperatorParams {
  Tensor phi1;
  Tensor projector;  // W; undefined for FullRank and PhiPhi
  Tensor phi2;       // only for PhiPhi

  /// Named parameter tensors, suffixed onto `prefix`.
  std::vector<NamedTensor> named(const std::string& prefix) const;
  std::size_t parameter_count() const;
};

/// Draws unit coefficients via basis::init_unit and W ~ N(0, 1/fan_in).
OperatorParams init_operator(const KArAtConfig& cfg, std::size_t tokens, std::mt19937_64& rng);

/// output_p = sum_q phi_pq(a_row_q) for a single row.
std::vector<double> apply_operator(const basis::BasisSpec& spec, const Tensor& coeffs,
                                   std::span<const double> a_row);

/// Learnable replacement for row-wise softmax on one head's N x N logits.
Tensor karat_activate(const Tensor& logits, const KArAtConfig& cfg, const OperatorParams& params);

/// Optional taps for the attention matrices computed inside a head.
struct HeadTrace {
  Tensor pre;   // QK^T / sqrt(d_h)
  Tensor post;  // after softmax or KArAt
};

/// A = Q K^T / sqrt(d_h), activated by softmax or KArAt, times V.
Tensor attention_head_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                              HeadActivation activation, const KArAtConfig& cfg,
                              const OperatorParams* params, HeadTrace* trace = nullptr);

/// Per-(layer, head) operator references. Under Universal sharing all layers
/// hold the same pointer for a given head. Softmax heads hold nullptr.
struct SharedOperators {
  std::vector<std::vector<std::shared_ptr<OperatorParams>>> by_layer;

  const std::shared_ptr<OperatorParams>& at(std::size_t layer, std::size_t head) const {
    return by_layer[layer][head];
  }
  /// Distinct operator objects, in first-use order (layer-major).
  std::vector<std::shared_ptr<OperatorParams>> unique() const;
};

SharedOperators make_shared_params(const KArAtConfig& cfg, std::size_t tokens, std::size_t heads,
                                   std::size_t layers, std::uint64_t seed);
SharedOperators make_shared_params(const KArAtConfig& cfg, std::size_t tokens, std::size_t heads,
                                   std::size_t layers, std::mt19937_64& rng);

/// Learnable activation parameters for one operator of the given layout.
std::size_t operator_param_count(const KArAtConfig& cfg, std::size_t tokens);

/// Closed-form count over the whole model:
///   per operator  FullRank N*N*P | PhiThenW r*N*P + N*r | WThenPhi r*N + N*r*P | PhiPhi 2*r*N*P
///   operators     Blockwise h_k*L | Universal h_k   (h_k = heads assigned to KArAt)
std::size_t count_activation_params(const KArAtConfig& cfg, std::size_t tokens, std::size_t heads,
                                    std::size_t layers);

}  // namespace karat::attention
