#pragma once

// Dense numerical kernels behind the tensor ops.
//
// `karat::kernels::*` are the production versions, parallelised with OpenMP
// over independent output rows (or parameter rows in reductions). Every output
// element is produced by exactly one thread with a fixed accumulation order, so
// results are bit-identical for any thread count.
//
// `karat::kernels::reference::*` are plain serial loops kept for testing and
// benchmarking. They accumulate in the same order as the parallel kernels.
//
// All matrices are row-major. Accumulating kernels add into their outputs.

#include <cstddef>
#include <span>

#include "karat/basis.hpp"

namespace karat::kernels {

/// C = op(A) * op(B) (or C += ... when accumulate), op(A) is m x k, op(B) is k x n.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate);

void softmax_rows(std::size_t m, std::size_t n, std::span<const double> x, std::span<double> y);
/// dX += J^T g for y = softmax(x) row-wise.
void softmax_rows_backward(std::size_t m, std::size_t n, std::span<const double> y,
                           std::span<const double> g, std::span<double> dx);

/// y = gamma * (x - mean) * rstd + beta per row; saves mean and rstd per row.
void layer_norm(std::size_t m, std::size_t n, std::span<const double> x,
                std::span<const double> gamma, std::span<const double> beta, double eps,
                std::span<double> y, std::span<double> mean, std::span<double> rstd);
void layer_norm_backward(std::size_t m, std::size_t n, std::span<const double> x,
                         std::span<const double> mean, std::span<const double> rstd,
                         std::span<const double> gamma, std::span<const double> g,
                         std::span<double> dx, std::span<double> dgamma,
                         std::span<double> dbeta);

/// Y[k,p] = sum_q phi_pq(X[k,q]); X is m x n_in, coeffs n_out x n_in x P, Y m x n_out.
void basis_operator(const basis::BasisSpec& spec, std::size_t m, std::size_t n_in,
                    std::size_t n_out, std::span<const double> x,
                    std::span<const double> coeffs, std::span<double> y);
/// Accumulates dX (may be empty to skip) and dCoeffs (may be empty) given G = dL/dY.
void basis_operator_backward(const basis::BasisSpec& spec, std::size_t m, std::size_t n_in,
                             std::size_t n_out, std::span<const double> x,
                             std::span<const double> coeffs, std::span<const double> g,
                             std::span<double> dx, std::span<double> dcoeffs);

/// Simplex projection of every row; `lambdas`/`active` optional.
void project_rows(std::size_t m, std::size_t n, std::span<const double> in, std::span<double> out,
                  std::span<double> lambdas = {}, std::span<std::size_t> active = {});

namespace reference {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate);
void softmax_rows(std::size_t m, std::size_t n, std::span<const double> x, std::span<double> y);
void softmax_rows_backward(std::size_t m, std::size_t n, std::span<const double> y,
                           std::span<const double> g, std::span<double> dx);
void layer_norm(std::size_t m, std::size_t n, std::span<const double> x,
                std::span<const double> gamma, std::span<const double> beta, double eps,
                std::span<double> y, std::span<double> mean, std::span<double> rstd);
void layer_norm_backward(std::size_t m, std::size_t n, std::span<const double> x,
                         std::span<const double> mean, std::span<const double> rstd,
                         std::span<const double> gamma, std::span<const double> g,
                         std::span<double> dx, std::span<double> dgamma,
                         std::span<double> dbeta);
void basis_operator(const basis::BasisSpec& spec, std::size_t m, std::size_t n_in,
                    std::size_t n_out, std::span<const double> x,
                    std::span<const double> coeffs, std::span<double> y);
void basis_operator_backward(const basis::BasisSpec& spec, std::size_t m, std::size_t n_in,
                             std::size_t n_out, std::span<const double> x,
                             std::span<const double> coeffs, std::span<const double> g,
                             std::span<double> dx, std::span<double> dcoeffs);
void project_rows(std::size_t m, std::size_t n, std::span<const double> in, std::span<double> out,
                  std::span<double> lambdas = {}, std::span<std::size_t> active = {});

}  // namespace reference

}  // namespace karat::kernels
