#include "karat/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "karat/error.hpp"

namespace karat::simplex {

SimplexResult project_simplex(std::span<const double> y) {
  const std::size_t m = y.size();
  if (m == 0) throw ContractError("project_simplex on an empty vector");
  for (double v : y) {
    if (!std::isfinite(v)) throw NumericError("project_simplex: non-finite input");
  }

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return y[a] > y[b]; });

  double prefix = 0.0;
  double rho_prefix = y[order[0]];
  std::size_t rho = 1;
  for (std::size_t i = 0; i < m; ++i) {
    prefix += y[order[i]];
    const double candidate = y[order[i]] - (prefix - 1.0) / static_cast<double>(i + 1);
    if (candidate > 0.0) {
      rho = i + 1;
      rho_prefix = prefix;
    }
  }

  SimplexResult result;
  result.rho = rho;
  result.lambda = (rho_prefix - 1.0) / static_cast<double>(rho);
  result.x_star.resize(m);
  for (std::size_t i = 0; i < m; ++i) result.x_star[i] = std::max(y[i] - result.lambda, 0.0);
  return result;
}

std::vector<double> oracle_project(std::span<const double> y) {
  if (y.empty()) throw ContractError("oracle_project on an empty vector");
  double lo = *std::min_element(y.begin(), y.end()) - 1.0;
  double hi = *std::max_element(y.begin(), y.end());
  auto mass = [&](double lambda) {
    double s = 0.0;
    for (double v : y) s += std::max(v - lambda, 0.0);
    return s;
  };
  // mass(lo) >= 1 and mass(hi) = 0; mass is nonincreasing in lambda.
  for (int iter = 0; iter < 200 && hi - lo > 0.0; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (mass(mid) > 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double lambda = std::abs(mass(lo) - 1.0) <= std::abs(mass(hi) - 1.0) ? lo : hi;
  std::vector<double> x(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) x[i] = std::max(y[i] - lambda, 0.0);
  return x;
}

void project_rows(std::size_t rows, std::size_t cols, std::span<const double> in,
                  std::span<double> out, std::span<double> lambdas,
                  std::span<std::size_t> active) {
  for (std::size_t r = 0; r < rows; ++r) {
    const SimplexResult res = project_simplex(in.subspan(r * cols, cols));
    std::copy(res.x_star.begin(), res.x_star.end(), out.begin() + static_cast<std::ptrdiff_t>(r * cols));
    if (!lambdas.empty()) lambdas[r] = res.lambda;
    if (!active.empty()) active[r] = res.rho;
  }
}

}  // namespace karat::simplex
