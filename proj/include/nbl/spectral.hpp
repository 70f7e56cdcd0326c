#pragma once

#include "nbl/common.hpp"

namespace nbl::spectral {

struct EigenPair {
  Vector values;   // ascending
  Matrix vectors;  // orthonormal columns, vectors.col(i) pairs with values(i)
};

// Throws ValidationError if M is not square or not symmetric within 1e-8
// (relative to its Frobenius norm), NumericError on non-convergence.
EigenPair sym_eig(const Matrix& m);

// V * diag(max(lambda, floor_rel * lambda_max)^(-1/2)) * V^T.
// Throws NumericError if lambda_max <= 0.
Matrix inv_sqrt_psd(const Matrix& m, double floor_rel = Regularization{}.floor_rel);

// Descending, length min(rows, cols).
Vector singular_values(const Matrix& m);

// Solves A * X = B for symmetric positive (semi)definite A. Cholesky first,
// LDLT fallback. Throws NumericError if both fail.
Matrix solve_psd(const Matrix& a, const Matrix& b);

// M + ridge_rel * (trace / dim) * I. Zero-trace input is returned unchanged.
Matrix add_ridge(const Matrix& m, double ridge_rel = Regularization{}.ridge_rel);

}  // namespace nbl::spectral
