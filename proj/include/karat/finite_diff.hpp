#pragma once

#include <functional>
#include <vector>

#include "karat/tensor.hpp"

namespace karat {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate
/// of x. Perturbs x in place and restores it; f must not record gradients.
std::vector<double> finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor& x,
                                     double step = 1e-5);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                          double floor = 1e-8);

}  // namespace karat
