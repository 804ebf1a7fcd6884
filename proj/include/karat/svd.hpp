#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace karat::linalg {

/// Thin SVD A = U diag(s) V^T of a row-major m x n matrix, k = min(m, n).
/// U is m x k and V is n x k, both row-major; s is non-increasing.
struct SVDResult {
  std::size_t m = 0, n = 0, k = 0;
  std::vector<double> u;
  std::vector<double> s;
  std::vector<double> v;

  /// U diag(s) V^T, row-major m x n.
  std::vector<double> reconstruct() const;
};

/// One-sided (Hestenes) Jacobi SVD. Throws NumericError, prefixed with
/// `label`, when the sweeps do not converge or the input is not finite.
SVDResult svd(std::span<const double> a, std::size_t m, std::size_t n, const std::string& label = "matrix",
              int max_sweeps = 60);

std::vector<double> singular_values(std::span<const double> a, std::size_t m, std::size_t n,
                                    const std::string& label = "matrix");

/// ||A - B||_F / ||A||_F (or ||A - B||_F when A is zero).
double relative_frobenius_error(std::span<const double> a, std::span<const double> b);

}  // namespace karat::linalg
