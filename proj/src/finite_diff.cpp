#include "karat/finite_diff.hpp"

#include <algorithm>
#include <cmath>

#include "karat/error.hpp"

namespace karat {

std::vector<double> finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor& x,
                                     double step) {
  NoGradGuard no_grad;
  std::vector<double> grad(x.size());
  auto data = x.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + step;
    const double up = f(x);
    data[i] = orig - step;
    const double down = f(x);
    data[i] = orig;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  if (a.size() != b.size()) throw DimensionError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace karat
