// Serial reference kernels. Straight loops, no tables or blocking.

#include <algorithm>
#include <cmath>
#include <vector>

#include "karat/kernels.hpp"
#include "karat/simplex.hpp"

namespace karat::kernels::reference {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
  }
}

void softmax_rows(std::size_t m, std::size_t n, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < m; ++r) {
    double mx = x[r * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[r * n + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[r * n + j] = std::exp(x[r * n + j] - mx);
      sum += y[r * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] /= sum;
  }
}

void softmax_rows_backward(std::size_t m, std::size_t n, std::span<const double> y,
                           std::span<const double> g, std::span<double> dx) {
  for (std::size_t r = 0; r < m; ++r) {
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
    for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
  }
}

void layer_norm(std::size_t m, std::size_t n, std::span<const double> x,
                std::span<const double> gamma, std::span<const double> beta, double eps,
                std::span<double> y, std::span<double> mean, std::span<double> rstd) {
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x[r * n + j];
    const double mu = s * inv_n;
    double v = 0.0;
    for (std::size_t j = 0; j < n; ++j) v += (x[r * n + j] - mu) * (x[r * n + j] - mu);
    mean[r] = mu;
    rstd[r] = 1.0 / std::sqrt(v * inv_n + eps);
    for (std::size_t j = 0; j < n; ++j) {
      y[r * n + j] = (x[r * n + j] - mu) * rstd[r] * gamma[j] + beta[j];
    }
  }
}

void layer_norm_backward(std::size_t m, std::size_t n, std::span<const double> x,
                         std::span<const double> mean, std::span<const double> rstd,
                         std::span<const double> gamma, std::span<const double> g,
                         std::span<double> dx, std::span<double> dgamma,
                         std::span<double> dbeta) {
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < m; ++r) {
    double sum_d = 0.0, sum_dx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double xhat = (x[r * n + j] - mean[r]) * rstd[r];
      const double d = g[r * n + j] * gamma[j];
      sum_d += d;
      sum_dx += d * xhat;
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double xhat = (x[r * n + j] - mean[r]) * rstd[r];
      const double d = g[r * n + j] * gamma[j];
      if (!dx.empty()) dx[r * n + j] += rstd[r] * (d - sum_d * inv_n - xhat * sum_dx * inv_n);
      if (!dgamma.empty()) dgamma[j] += g[r * n + j] * xhat;
      if (!dbeta.empty()) dbeta[j] += g[r * n + j];
    }
  }
}

void basis_operator(const basis::BasisSpec& spec, std::size_t m, std::size_t n_in,
                    std::size_t n_out, std::span<const double> x,
                    std::span<const double> coeffs, std::span<double> y) {
  const std::size_t np = spec.params_per_unit();
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t p = 0; p < n_out; ++p) {
      double out = 0.0;
      for (std::size_t q = 0; q < n_in; ++q) {
        out += basis::eval_unit(spec, coeffs.subspan((p * n_in + q) * np, np), x[k * n_in + q]);
      }
      y[k * n_out + p] = out;
    }
  }
}

void basis_operator_backward(const basis::BasisSpec& spec, std::size_t m, std::size_t n_in,
                             std::size_t n_out, std::span<const double> x,
                             std::span<const double> coeffs, std::span<const double> g,
                             std::span<double> dx, std::span<double> dcoeffs) {
  const std::size_t np = spec.params_per_unit();
  std::vector<double> dparams(np);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t p = 0; p < n_out; ++p) {
      const double gkp = g[k * n_out + p];
      for (std::size_t q = 0; q < n_in; ++q) {
        double slope = 0.0;
        basis::eval_unit_grad(spec, coeffs.subspan((p * n_in + q) * np, np), x[k * n_in + q],
                              slope, dparams);
        if (!dx.empty()) dx[k * n_in + q] += gkp * slope;
        if (!dcoeffs.empty()) {
          for (std::size_t j = 0; j < np; ++j) dcoeffs[(p * n_in + q) * np + j] += gkp * dparams[j];
        }
      }
    }
  }
}

void project_rows(std::size_t m, std::size_t n, std::span<const double> in, std::span<double> out,
                  std::span<double> lambdas, std::span<std::size_t> active) {
  simplex::project_rows(m, n, in, out, lambdas, active);
}

}  // namespace karat::kernels::reference
