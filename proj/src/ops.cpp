#include "karat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "karat/error.hpp"
#include "karat/kernels.hpp"

namespace karat {

namespace {

std::vector<double>& grad_of(const Tensor& t) { return t.impl()->ensure_grad(); }

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

Tensor finish(Shape shape, std::vector<double> data, bool track, std::vector<Tensor> parents,
              Tape::BackwardFn fn) {
  Tensor out = make_result(std::move(shape), std::move(data), track);
  if (track) Tape::current().record(out, std::move(parents), std::move(fn));
  return out;
}

double gelu_value(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_slope(double x) {
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm(false, false, m, n, k, a.data(), b.data(), out, false);
  const bool track = any_requires_grad({&a, &b});
  return finish({m, n}, std::move(out), track, {a, b}, [a, b, m, n, k](const std::vector<double>& g) {
    if (a.requires_grad()) kernels::gemm(false, true, m, k, n, g, b.data(), grad_of(a), true);
    if (b.requires_grad()) kernels::gemm(true, false, k, n, m, a.data(), g, grad_of(b), true);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner extents differ " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  kernels::gemm(false, true, m, n, k, a.data(), b.data(), out, false);
  const bool track = any_requires_grad({&a, &b});
  return finish({m, n}, std::move(out), track, {a, b}, [a, b, m, n, k](const std::vector<double>& g) {
    // C = A B^T: dA = G B, dB = G^T A
    if (a.requires_grad()) kernels::gemm(false, false, m, k, n, g, b.data(), grad_of(a), true);
    if (b.requires_grad()) kernels::gemm(true, false, n, k, m, g, a.data(), grad_of(b), true);
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  const bool track = any_requires_grad({&a});
  return finish({n, m}, std::move(out), track, {a}, [a, m, n](const std::vector<double>& g) {
    auto& ga = grad_of(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  const bool track = any_requires_grad({&a, &b});
  return finish(a.shape(), std::move(out), track, {a, b}, [a, b](const std::vector<double>& g) {
    if (a.requires_grad()) {
      auto& ga = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  const bool track = any_requires_grad({&a, &b});
  return finish(a.shape(), std::move(out), track, {a, b}, [a, b](const std::vector<double>& g) {
    if (a.requires_grad()) {
      auto& ga = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  const bool track = any_requires_grad({&a, &b});
  return finish(a.shape(), std::move(out), track, {a, b}, [a, b](const std::vector<double>& g) {
    if (a.requires_grad()) {
      auto& ga = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto& gb = grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  const bool track = any_requires_grad({&a});
  return finish(a.shape(), std::move(out), track, {a}, [a, factor](const std::vector<double>& g) {
    auto& ga = grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias of shape " + shape_string(bias.shape()) +
                         " for matrix " + shape_string(x.shape()));
  }
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] + bias.data()[j];
  const bool track = any_requires_grad({&x, &bias});
  return finish({m, n}, std::move(out), track, {x, bias}, [x, bias, m, n](const std::vector<double>& g) {
    if (x.requires_grad()) {
      auto& gx = grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto& gb = grad_of(bias);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  const bool track = any_requires_grad({&a});
  return finish(std::move(shape), a.values(), track, {a}, [a](const std::vector<double>& g) {
    auto& ga = grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  const bool track = any_requires_grad({&a});
  return finish({}, {s}, track, {a}, [a](const std::vector<double>& g) {
    auto& ga = grad_of(a);
    for (double& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor softmax_rows(const Tensor& a) {
  require_matrix(a, "softmax_rows");
  for (double v : a.data()) {
    if (!std::isfinite(v)) throw NumericError("softmax_rows: non-finite input");
  }
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  kernels::softmax_rows(m, n, a.data(), out);
  const bool track = any_requires_grad({&a});
  Tensor result = make_result({m, n}, std::move(out), track);
  if (track) {
    // Capture the output storage, not the Tensor, to avoid a reference cycle.
    std::weak_ptr<TensorImpl> y = result.impl();
    Tape::current().record(result, {a}, [a, y, m, n](const std::vector<double>& g) {
      kernels::softmax_rows_backward(m, n, y.lock()->data, g, grad_of(a));
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.size() != n || beta.size() != n) {
    throw DimensionError("layer_norm: affine parameters must have " + std::to_string(n) + " entries");
  }
  std::vector<double> out(m * n), mu(m), rstd(m);
  kernels::layer_norm(m, n, x.data(), gamma.data(), beta.data(), eps, out, mu, rstd);
  const bool track = any_requires_grad({&x, &gamma, &beta});
  return finish({m, n}, std::move(out), track, {x, gamma, beta},
                [x, gamma, beta, m, n, mu = std::move(mu), rstd = std::move(rstd)](const std::vector<double>& g) {
                  std::span<double> dx, dg, db;
                  if (x.requires_grad()) dx = grad_of(x);
                  if (gamma.requires_grad()) dg = grad_of(gamma);
                  if (beta.requires_grad()) db = grad_of(beta);
                  kernels::layer_norm_backward(m, n, x.data(), mu, rstd, gamma.data(), g, dx, dg, db);
                });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(a.data()[i]);
  const bool track = any_requires_grad({&a});
  return finish(a.shape(), std::move(out), track, {a}, [a](const std::vector<double>& g) {
    auto& ga = grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_slope(a.data()[i]);
  });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix(a, "slice_rows");
  const std::size_t n = a.cols();
  if (start + count > a.rows()) throw DimensionError("slice_rows: range out of bounds");
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                          a.data().begin() + static_cast<std::ptrdiff_t>((start + count) * n));
  const bool track = any_requires_grad({&a});
  return finish({count, n}, std::move(out), track, {a}, [a, start, n](const std::vector<double>& g) {
    auto& ga = grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[start * n + i] += g[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (start + count > n) throw DimensionError("slice_cols: range out of bounds");
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a.data()[i * n + start + j];
  const bool track = any_requires_grad({&a});
  return finish({m, count}, std::move(out), track, {a},
                [a, start, count, m, n](const std::vector<double>& g) {
                  auto& ga = grad_of(a);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < count; ++j) ga[i * n + start + j] += g[i * count + j];
                });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  bool track = false;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != n) throw DimensionError("concat_rows: column counts differ");
    m += p.rows();
    track = track || (grad_enabled() && p.requires_grad());
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return finish({m, n}, std::move(out), track, parts, [parts](const std::vector<double>& g) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) {
        auto& gp = grad_of(p);
        for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[offset + i];
      }
      offset += p.size();
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  bool track = false;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    n += p.cols();
    track = track || (grad_enabled() && p.requires_grad());
  }
  std::vector<double> out(m * n);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * n + col + j] = p.data()[i * w + j];
    col += w;
  }
  return finish({m, n}, std::move(out), track, parts, [parts, m, n](const std::vector<double>& g) {
    std::size_t c = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.cols();
      if (p.requires_grad()) {
        auto& gp = grad_of(p);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + c + j];
      }
      c += w;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, double smoothing) {
  require_matrix(logits, "cross_entropy");
  const std::size_t m = logits.rows(), c = logits.cols();
  if (labels.size() != m) throw DimensionError("cross_entropy: one label per row required");
  std::vector<double> probs(m * c);
  kernels::softmax_rows(m, c, logits.data(), probs);
  const double off = smoothing / static_cast<double>(c);
  const double on = 1.0 - smoothing + off;
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || y >= c) throw DimensionError("cross_entropy: label out of range");
    const double* z = logits.data().data() + i * c;
    double mx = z[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    double se = 0.0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(z[j] - mx);
    const double lse = mx + std::log(se);
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) row += (j == y ? on : off) * (lse - z[j]);
    total += row;
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  const bool track = any_requires_grad({&logits});
  return finish({}, {total * inv_m}, track, {logits},
                [logits, labels, probs = std::move(probs), m, c, on, off, inv_m](const std::vector<double>& g) {
                  auto& gl = grad_of(logits);
                  for (std::size_t i = 0; i < m; ++i) {
                    const auto y = static_cast<std::size_t>(labels[i]);
                    for (std::size_t j = 0; j < c; ++j) {
                      gl[i * c + j] += g[0] * inv_m * (probs[i * c + j] - (j == y ? on : off));
                    }
                  }
                });
}

Tensor basis_operator(const Tensor& x, const Tensor& coeffs, const basis::BasisSpec& spec) {
  require_matrix(x, "basis_operator");
  const std::size_t m = x.rows(), n_in = x.cols();
  const std::size_t np = spec.params_per_unit();
  if (coeffs.rank() != 3 || coeffs.shape()[1] != n_in || coeffs.shape()[2] != np) {
    throw DimensionError("basis_operator: coefficients " + shape_string(coeffs.shape()) +
                         " do not match input " + shape_string(x.shape()) + " with " +
                         std::to_string(np) + " parameters per unit");
  }
  const std::size_t n_out = coeffs.shape()[0];
  std::vector<double> out(m * n_out);
  kernels::basis_operator(spec, m, n_in, n_out, x.data(), coeffs.data(), out);
  const bool track = any_requires_grad({&x, &coeffs});
  return finish({m, n_out}, std::move(out), track, {x, coeffs},
                [x, coeffs, spec, m, n_in, n_out](const std::vector<double>& g) {
                  std::span<double> dx, dc;
                  if (x.requires_grad()) dx = grad_of(x);
                  if (coeffs.requires_grad()) dc = grad_of(coeffs);
                  kernels::basis_operator_backward(spec, m, n_in, n_out, x.data(), coeffs.data(), g, dx, dc);
                });
}

Tensor project_rows(const Tensor& a, ProjectionGrad mode) {
  require_matrix(a, "project_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  kernels::project_rows(m, n, a.data(), out);
  const bool track = any_requires_grad({&a});
  std::vector<double> kept;
  if (track && mode == ProjectionGrad::ActiveSet) kept = out;
  return finish({m, n}, std::move(out), track, {a},
                [a, mode, m, n, x = std::move(kept)](const std::vector<double>& g) {
                  auto& ga = grad_of(a);
                  if (mode == ProjectionGrad::StraightThrough) {
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    return;
                  }
                  for (std::size_t r = 0; r < m; ++r) {
                    double active_sum = 0.0;
                    std::size_t active = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                      if (x[r * n + j] > 0.0) {
                        active_sum += g[r * n + j];
                        ++active;
                      }
                    }
                    const double shift = active ? active_sum / static_cast<double>(active) : 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      if (x[r * n + j] > 0.0) ga[r * n + j] += g[r * n + j] - shift;
                    }
                  }
                });
}

}  // namespace karat
