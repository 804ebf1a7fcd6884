#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace karat::simplex {

struct SimplexResult {
  std::vector<double> x_star;
  double lambda = 0.0;
  std::size_t rho = 0;
};

/// Euclidean projection onto {x : x >= 0, sum x = 1}.
///
/// Sorts y descending (ties by original index), takes the largest i with
/// y_(i) - (sum_{j<=i} y_(j) - 1) / i > 0 as rho, sets
/// lambda = (sum_{j<=rho} y_(j) - 1) / rho and returns max(y - lambda, 0).
/// Throws NumericError on non-finite input, ContractError on empty input.
SimplexResult project_simplex(std::span<const double> y);

/// Independent check for project_simplex: bisection on lambda over
/// [min(y) - 1, max(y)] until sum max(y - lambda, 0) = 1.
std::vector<double> oracle_project(std::span<const double> y);

/// Projects each row of a row-major rows x cols matrix independently.
/// `lambdas` and `active` (optional, may be empty) receive per-row thresholds
/// and active-set sizes.
void project_rows(std::size_t rows, std::size_t cols, std::span<const double> in,
                  std::span<double> out, std::span<double> lambdas = {},
                  std::span<std::size_t> active = {});

}  // namespace karat::simplex
