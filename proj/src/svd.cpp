#include "karat/svd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "karat/error.hpp"

namespace karat::linalg {

std::vector<double> SVDResult::reconstruct() const {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += u[i * k + t] * s[t] * v[j * k + t];
      out[i * n + j] = acc;
    }
  }
  return out;
}

namespace {

// Orthogonalizes the columns of the rows x cols matrix `w` (row-major) in
// place, accumulating the rotations into `rot` (cols x cols).
void jacobi_columns(std::vector<double>& w, std::size_t rows, std::size_t cols, std::vector<double>& rot,
                    const std::string& label, int max_sweeps) {
  constexpr double kTol = 4.0 * std::numeric_limits<double>::epsilon();
  rot.assign(cols * cols, 0.0);
  for (std::size_t i = 0; i < cols; ++i) rot[i * cols + i] = 1.0;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
          const double wp = w[r * cols + p], wq = w[r * cols + q];
          alpha += wp * wp;
          beta += wq * wq;
          gamma += wp * wq;
        }
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < rows; ++r) {
          const double wp = w[r * cols + p], wq = w[r * cols + q];
          w[r * cols + p] = c * wp - s * wq;
          w[r * cols + q] = s * wp + c * wq;
        }
        for (std::size_t r = 0; r < cols; ++r) {
          const double vp = rot[r * cols + p], vq = rot[r * cols + q];
          rot[r * cols + p] = c * vp - s * vq;
          rot[r * cols + q] = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return;
  }
  throw NumericError(label + ": Jacobi SVD did not converge in " + std::to_string(max_sweeps) + " sweeps");
}

}  // namespace

SVDResult svd(std::span<const double> a, std::size_t m, std::size_t n, const std::string& label,
              int max_sweeps) {
  if (a.size() != m * n || m == 0 || n == 0) {
    throw DimensionError(label + ": SVD input size does not match " + std::to_string(m) + "x" + std::to_string(n));
  }
  for (double x : a) {
    if (!std::isfinite(x)) throw NumericError(label + ": SVD input contains non-finite values");
  }
  // Work on the orientation with at least as many rows as columns.
  const bool transposed = m < n;
  const std::size_t rows = transposed ? n : m, cols = transposed ? m : n;
  std::vector<double> w(rows * cols);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (transposed) {
        w[j * cols + i] = a[i * n + j];
      } else {
        w[i * cols + j] = a[i * n + j];
      }
    }
  }
  std::vector<double> rot;
  jacobi_columns(w, rows, cols, rot, label, max_sweeps);

  std::vector<double> norms(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    double sq = 0.0;
    for (std::size_t r = 0; r < rows; ++r) sq += w[r * cols + j] * w[r * cols + j];
    norms[j] = std::sqrt(sq);
  }
  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  // left: rows x k from the normalized columns; right: cols x k from rot.
  const std::size_t k = cols;
  std::vector<double> left(rows * k, 0.0), right(cols * k, 0.0), s(k);
  for (std::size_t t = 0; t < k; ++t) {
    const std::size_t j = order[t];
    s[t] = norms[j];
    if (norms[j] > 0.0) {
      for (std::size_t r = 0; r < rows; ++r) left[r * k + t] = w[r * cols + j] / norms[j];
    }
    for (std::size_t r = 0; r < cols; ++r) right[r * k + t] = rot[r * cols + j];
  }

  SVDResult out;
  out.m = m;
  out.n = n;
  out.k = k;
  out.s = std::move(s);
  if (transposed) {
    out.u = std::move(right);
    out.v = std::move(left);
  } else {
    out.u = std::move(left);
    out.v = std::move(right);
  }
  return out;
}

std::vector<double> singular_values(std::span<const double> a, std::size_t m, std::size_t n,
                                    const std::string& label) {
  return svd(a, m, n, label).s;
}

double relative_frobenius_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("relative_frobenius_error: size mismatch");
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    ref += a[i] * a[i];
  }
  return ref > 0.0 ? std::sqrt(diff / ref) : std::sqrt(diff);
}

}  // namespace karat::linalg
