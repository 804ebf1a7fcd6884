#pragma once

#include <cstddef>
#include <vector>

#include "karat/basis.hpp"
#include "karat/tensor.hpp"

namespace karat {

// Differentiable tensor ops. Each op records itself on the current thread's
// tape when gradients are enabled and at least one input requires them.
// Shape errors throw DimensionError.

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// x[m x n] + bias[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Row-wise softmax with max subtraction. NaN/inf input throws NumericError.
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
Tensor gelu(const Tensor& a);

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Mean cross-entropy over rows of `logits` against integer labels, with
/// targets smoothed to (1 - smoothing) on the label plus smoothing / C everywhere.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, double smoothing = 0.0);

/// Y[k,p] = sum_q phi_pq(X[k,q]) where unit (p,q) reads coeffs[p, q, :].
/// x is m x n_in; coeffs is n_out x n_in x P; result is m x n_out.
Tensor basis_operator(const Tensor& x, const Tensor& coeffs, const basis::BasisSpec& spec);

enum class ProjectionGrad {
  // Backward passes the incoming gradient through unchanged.
  StraightThrough,
  // Exact Jacobian of the projection: masked to the active set, minus its mean there.
  ActiveSet,
};

/// Simplex projection of every row.
Tensor project_rows(const Tensor& a, ProjectionGrad mode = ProjectionGrad::StraightThrough);

}  // namespace karat
