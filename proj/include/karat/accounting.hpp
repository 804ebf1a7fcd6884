#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "karat/vit.hpp"

namespace karat::accounting {

/// FLOPs charged per basis term per unit evaluation (cos, sin, two multiply-adds).
inline constexpr double kTermCost = 4.0;

/// Published figures for a named geometry and attention variant.
struct ReferenceFigures {
  double activation_params = 0.0;
  double total_params = 0.0;
  double activation_gflops = 0.0;
  double total_gflops = 0.0;
  double memory_gb = 0.0;
};

struct Accounting {
  std::size_t tokens = 0;

  std::size_t patch_embedding = 0;  // p^2 C d + d
  std::size_t class_token = 0;      // d
  std::size_t positional = 0;       // N d
  std::size_t per_block = 0;        // (4 + 2m) d^2 + (9 + m) d, m = MLP ratio
  std::size_t blocks = 0;           // L * per_block
  std::size_t final_norm = 0;       // 2 d
  std::size_t head = 0;             // d C + C
  std::size_t backbone = 0;

  std::size_t unit_params = 0;       // basis coefficients over all operators
  std::size_t projector_params = 0;  // W matrices over all operators
  std::size_t activation_params = 0;
  std::size_t total = 0;

  // Attention activation per forward pass. Per head and layer, a KArAt head
  // costs 2*M + kTermCost*T*E and a softmax head 3*N^2, where E is the number
  // of unit evaluations, M the projector multiply-adds and T the basis terms
  // per unit (G for Fourier, the coefficient count otherwise). For the default
  // layout this is 2 N^2 r h L + kTermCost N^2 r G h L.
  double activation_gflops = 0.0;
  // Same quantity under the (3T + 1) N^2 r h L convention (M counted once,
  // three FLOPs per term) used by the published table.
  double activation_gflops_reference = 0.0;
  // Multiply-adds of the backbone: patch embedding, per block
  // (4 + 2m) N d^2 + 2 N^2 d, and the classifier.
  double backbone_gmacs = 0.0;
};

Accounting count_params_flops(const vit::ViTConfig& cfg);

/// Applies an attention tag to a geometry: "none"/"softmax", or "g<G><b|u>"
/// for Fourier KArAt with grid G, rank `rank`, blockwise or universal sharing.
vit::ViTConfig with_attention(vit::ViTConfig cfg, const std::string& tag, int rank = 12);

/// Published figures, when known, for a preset ("vit-tiny", ...) and tag.
std::optional<ReferenceFigures> reference_figures(const std::string& preset, const std::string& tag);

/// |value - reference| / reference exceeds `tolerance` (1% by default).
bool discrepant(double value, double reference, double tolerance = 0.01);

/// Human-readable table. Reference rows are appended when `reference` is set,
/// with a FLAG line for each count or FLOP figure that disagrees by more than 1%.
std::string format_report(const Accounting& acc, const vit::ViTConfig& cfg, const std::string& label,
                          const std::optional<ReferenceFigures>& reference);

}  // namespace karat::accounting
