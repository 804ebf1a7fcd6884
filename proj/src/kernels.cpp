#include "karat/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "karat/error.hpp"
#include "karat/simplex.hpp"

namespace karat::kernels {

namespace {

// Below this many multiply-adds a kernel stays on the calling thread.
constexpr std::size_t kParallelWork = 1 << 14;

using std::ptrdiff_t;

inline double op_a(bool trans, std::span<const double> a, std::size_t m, std::size_t k,
                   std::size_t i, std::size_t p) {
  return trans ? a[p * m + i] : a[i * k + p];
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite input");
  }
}

// cos(m x), sin(m x) for m = 1..G, laid out [c_1..c_G, s_1..s_G] per entry.
void fourier_table(std::size_t count, std::span<const double> x, std::size_t grid,
                   std::vector<double>& table) {
  table.resize(count * 2 * grid);
  const bool par = count * grid > kParallelWork / 8;
#pragma omp parallel for schedule(static) if (par)
  for (ptrdiff_t e = 0; e < static_cast<ptrdiff_t>(count); ++e) {
    double* t = table.data() + static_cast<std::size_t>(e) * 2 * grid;
    const double xe = x[static_cast<std::size_t>(e)];
    for (std::size_t m = 1; m <= grid; ++m) {
      const double fm = static_cast<double>(m);
      t[m - 1] = std::cos(fm * xe);
      t[grid + m - 1] = std::sin(fm * xe);
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  const bool par = m * n * k > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (ptrdiff_t ii = 0; ii < static_cast<ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c.data() + i * n;
    if (trans_b) {
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b.data() + j * k;
        double s = accumulate ? crow[j] : 0.0;
        for (std::size_t p = 0; p < k; ++p) s += op_a(trans_a, a, m, k, i, p) * brow[p];
        crow[j] = s;
      }
    } else {
      if (!accumulate) std::fill(crow, crow + n, 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = op_a(trans_a, a, m, k, i, p);
        const double* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
}

void softmax_rows(std::size_t m, std::size_t n, std::span<const double> x, std::span<double> y) {
  const bool par = m * n > kParallelWork / 4;
#pragma omp parallel for schedule(static) if (par)
  for (ptrdiff_t rr = 0; rr < static_cast<ptrdiff_t>(m); ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const double* xr = x.data() + r * n;
    double* yr = y.data() + r * n;
    double mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= sum;
  }
}

void softmax_rows_backward(std::size_t m, std::size_t n, std::span<const double> y,
                           std::span<const double> g, std::span<double> dx) {
  const bool par = m * n > kParallelWork / 4;
#pragma omp parallel for schedule(static) if (par)
  for (ptrdiff_t rr = 0; rr < static_cast<ptrdiff_t>(m); ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const double* yr = y.data() + r * n;
    const double* gr = g.data() + r * n;
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
    for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += yr[j] * (gr[j] - dot);
  }
}

void layer_norm(std::size_t m, std::size_t n, std::span<const double> x,
                std::span<const double> gamma, std::span<const double> beta, double eps,
                std::span<double> y, std::span<double> mean, std::span<double> rstd) {
  const bool par = m * n > kParallelWork / 4;
  const double inv_n = 1.0 / static_cast<double>(n);
#pragma omp parallel for schedule(static) if (par)
  for (ptrdiff_t rr = 0; rr < static_cast<ptrdiff_t>(m); ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const double* xr = x.data() + r * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += xr[j];
    const double mu = s * inv_n;
    double v = 0.0;
    for (std::size_t j = 0; j < n; ++j) v += (xr[j] - mu) * (xr[j] - mu);
    const double rs = 1.0 / std::sqrt(v * inv_n + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
  }
}

void layer_norm_backward(std::size_t m, std::size_t n, std::span<const double> x,
                         std::span<const double> mean, std::span<const double> rstd,
                         std::span<const double> gamma, std::span<const double> g,
                         std::span<double> dx, std::span<double> dgamma,
                         std::span<double> dbeta) {
  const bool par = m * n > kParallelWork / 4;
  const double inv_n = 1.0 / static_cast<double>(n);
  if (!dx.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (ptrdiff_t rr = 0; rr < static_cast<ptrdiff_t>(m); ++rr) {
      const auto r = static_cast<std::size_t>(rr);
      const double* xr = x.data() + r * n;
      const double* gr = g.data() + r * n;
      double sum_d = 0.0, sum_dx = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double xhat = (xr[j] - mean[r]) * rstd[r];
        const double d = gr[j] * gamma[j];
        sum_d += d;
        sum_dx += d * xhat;
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double xhat = (xr[j] - mean[r]) * rstd[r];
        const double d = gr[j] * gamma[j];
        dx[r * n + j] += rstd[r] * (d - sum_d * inv_n - xhat * sum_dx * inv_n);
      }
    }
  }
#pragma omp parallel for schedule(static) if (par)
  for (ptrdiff_t jj = 0; jj < static_cast<ptrdiff_t>(n); ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    for (std::size_t r = 0; r < m; ++r) {
      const double xhat = (x[r * n + j] - mean[r]) * rstd[r];
      if (!dgamma.empty()) dgamma[j] += g[r * n + j] * xhat;
      if (!dbeta.empty()) dbeta[j] += g[r * n + j];
    }
  }
}

void basis_operator(const basis::BasisSpec& spec, std::size_t m, std::size_t n_in,
                    std::size_t n_out, std::span<const double> x,
                    std::span<const double> coeffs, std::span<double> y) {
  const std::size_t np = spec.params_per_unit();
  const bool par = m * n_in * n_out * np > kParallelWork;

  if (spec.kind == basis::Kind::Fourier) {
    const std::size_t grid = static_cast<std::size_t>(spec.grid_size);
    std::vector<double> table;
    fourier_table(m * n_in, x, grid, table);
#pragma omp parallel for schedule(static) if (par)
    for (ptrdiff_t kk = 0; kk < static_cast<ptrdiff_t>(m); ++kk) {
      const auto k = static_cast<std::size_t>(kk);
      for (std::size_t p = 0; p < n_out; ++p) {
        double out = 0.0;
        for (std::size_t q = 0; q < n_in; ++q) {
          const double* t = table.data() + (k * n_in + q) * 2 * grid;
          const double* c = coeffs.data() + (p * n_in + q) * np;
          double acc = 0.0;
          for (std::size_t g = 0; g < grid; ++g) acc += c[g] * t[g] + c[grid + g] * t[grid + g];
          if (spec.fourier_dc) acc += c[2 * grid];
          out += basis::eval_base_activation(spec.base, x[k * n_in + q]) + acc;
        }
        y[k * n_out + p] = out;
      }
    }
    return;
  }

#pragma omp parallel for schedule(static) if (par)
  for (ptrdiff_t kk = 0; kk < static_cast<ptrdiff_t>(m); ++kk) {
    const auto k = static_cast<std::size_t>(kk);
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
  const bool par = m * n_in * n_out * np > kParallelWork;

  if (spec.kind == basis::Kind::Fourier) {
    const std::size_t grid = static_cast<std::size_t>(spec.grid_size);
    std::vector<double> table;
    fourier_table(m * n_in, x, grid, table);
    if (!dx.empty()) {
#pragma omp parallel for schedule(static) if (par)
      for (ptrdiff_t kk = 0; kk < static_cast<ptrdiff_t>(m); ++kk) {
        const auto k = static_cast<std::size_t>(kk);
        for (std::size_t p = 0; p < n_out; ++p) {
          const double gkp = g[k * n_out + p];
          for (std::size_t q = 0; q < n_in; ++q) {
            const double* t = table.data() + (k * n_in + q) * 2 * grid;
            const double* c = coeffs.data() + (p * n_in + q) * np;
            double slope = basis::base_activation_derivative(spec.base, x[k * n_in + q]);
            for (std::size_t j = 0; j < grid; ++j) {
              slope += static_cast<double>(j + 1) * (c[grid + j] * t[j] - c[j] * t[grid + j]);
            }
            dx[k * n_in + q] += gkp * slope;
          }
        }
      }
    }
    if (!dcoeffs.empty()) {
#pragma omp parallel for schedule(static) if (par)
      for (ptrdiff_t pp = 0; pp < static_cast<ptrdiff_t>(n_out); ++pp) {
        const auto p = static_cast<std::size_t>(pp);
        for (std::size_t k = 0; k < m; ++k) {
          const double gkp = g[k * n_out + p];
          for (std::size_t q = 0; q < n_in; ++q) {
            const double* t = table.data() + (k * n_in + q) * 2 * grid;
            double* d = dcoeffs.data() + (p * n_in + q) * np;
            for (std::size_t j = 0; j < 2 * grid; ++j) d[j] += gkp * t[j];
            if (spec.fourier_dc) d[2 * grid] += gkp * 1.0;
          }
        }
      }
    }
    return;
  }

  if (!dx.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (ptrdiff_t kk = 0; kk < static_cast<ptrdiff_t>(m); ++kk) {
      const auto k = static_cast<std::size_t>(kk);
      std::vector<double> dparams(np);
      for (std::size_t p = 0; p < n_out; ++p) {
        const double gkp = g[k * n_out + p];
        for (std::size_t q = 0; q < n_in; ++q) {
          double slope = 0.0;
          basis::eval_unit_grad(spec, coeffs.subspan((p * n_in + q) * np, np),
                                x[k * n_in + q], slope, dparams);
          dx[k * n_in + q] += gkp * slope;
        }
      }
    }
  }
  if (!dcoeffs.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (ptrdiff_t pp = 0; pp < static_cast<ptrdiff_t>(n_out); ++pp) {
      const auto p = static_cast<std::size_t>(pp);
      std::vector<double> dparams(np);
      for (std::size_t k = 0; k < m; ++k) {
        const double gkp = g[k * n_out + p];
        for (std::size_t q = 0; q < n_in; ++q) {
          double slope = 0.0;
          basis::eval_unit_grad(spec, coeffs.subspan((p * n_in + q) * np, np),
                                x[k * n_in + q], slope, dparams);
          double* d = dcoeffs.data() + (p * n_in + q) * np;
          for (std::size_t j = 0; j < np; ++j) d[j] += gkp * dparams[j];
        }
      }
    }
  }
}

void project_rows(std::size_t m, std::size_t n, std::span<const double> in, std::span<double> out,
                  std::span<double> lambdas, std::span<std::size_t> active) {
  require_finite(in.first(m * n), "project_rows");
  const bool par = m * n > kParallelWork / 8;
#pragma omp parallel for schedule(static) if (par)
  for (ptrdiff_t rr = 0; rr < static_cast<ptrdiff_t>(m); ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const auto res = simplex::project_simplex(in.subspan(r * n, n));
    std::copy(res.x_star.begin(), res.x_star.end(), out.begin() + static_cast<ptrdiff_t>(r * n));
    if (!lambdas.empty()) lambdas[r] = res.lambda;
    if (!active.empty()) active[r] = res.rho;
  }
}

}  // namespace karat::kernels
