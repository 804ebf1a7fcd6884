#include "karat/optim.hpp"

#include <cmath>
#include <numbers>

#include "karat/error.hpp"

namespace karat::train {

double lr_at(std::size_t step, std::size_t total_steps, const LrSchedule& s) {
  if (step > total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " beyond total " +
                        std::to_string(total_steps));
  }
  if (step < s.warmup_steps) {
    const double frac = static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    return s.warmup_lr + (s.base_lr - s.warmup_lr) * frac;
  }
  if (step == s.warmup_steps) return s.base_lr;
  const double span = static_cast<double>(total_steps - s.warmup_steps);
  const double t = static_cast<double>(step - s.warmup_steps) / span;
  return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

AdamW::AdamW(std::vector<vit::Parameter> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void AdamW::step(double lr) {
  for (const auto& p : params_) {
    for (double g : p.tensor.grad_view()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.tensor.has_grad()) continue;
    const auto g = p.tensor.grad_view();
    auto w = p.tensor.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    const double shrink = p.decay ? 1.0 - lr * cfg_.weight_decay : 1.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] = w[k] * shrink - lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double global_grad_norm(const std::vector<vit::Parameter>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.tensor.grad_view()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::vector<vit::Parameter>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : p.tensor.grad_buffer()) g *= factor;
    }
  }
  return norm;
}

}  // namespace karat::train
