#pragma once

#include <cstddef>
#include <vector>

#include "karat/vit.hpp"

namespace karat::train {

struct LrSchedule {
  double base_lr = 1e-3;
  double warmup_lr = 1e-6;
  double min_lr = 1e-5;
  std::size_t warmup_steps = 0;
};

/// Linear warmup from warmup_lr to base_lr over warmup_steps, then cosine
/// decay reaching min_lr at total_steps. Throws ContractError when step lies
/// outside [0, total_steps].
double lr_at(std::size_t step, std::size_t total_steps, const LrSchedule& schedule);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.05;
};

/// AdamW with decoupled weight decay, applied only to parameters flagged
/// `decay`. Parameters that have not accumulated a gradient are skipped.
class AdamW {
 public:
  AdamW(std::vector<vit::Parameter> params, AdamWConfig cfg = {});

  /// One update using each parameter's accumulated gradient. A non-finite
  /// gradient throws NumericError naming the parameter, before any update.
  void step(double lr);
  void zero_grad();

  std::size_t steps() const { return t_; }
  const std::vector<vit::Parameter>& parameters() const { return params_; }

 private:
  std::vector<vit::Parameter> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

double global_grad_norm(const std::vector<vit::Parameter>& params);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::vector<vit::Parameter>& params, double max_norm);

}  // namespace karat::train
