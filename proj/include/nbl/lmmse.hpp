#pragma once

#include "nbl/common.hpp"
#include "nbl/stats.hpp"

namespace nbl::lmmse {

// Affine substitute Y_hat = W X + b for one attention sublayer.
struct LinearMap {
  Matrix weight;  // h_out x h_in
  Vector bias;    // h_out
  LayerIndex source_layer = 0;
  double fit_nmse = 0.0;

  Eigen::Index h_in() const { return weight.cols(); }
  Eigen::Index h_out() const { return weight.rows(); }
};

// W = C_YX (C_XX + ridge)^{-1} via a Cholesky-type solve, b = E[Y] - W E[X].
// fit_nmse is the direct NMSE of the same covariance set.
LinearMap fit_lmmse(const stats::CovarianceSet& cs, LayerIndex layer = 0,
                    const Regularization& reg = {});

Matrix apply(const LinearMap& map, const Matrix& x);
ActivationMatrix apply(const LinearMap& map, const ActivationMatrix& x);

// ||C_YX - W C_XX||_F / ||C_YX||_F. Zero when C_YX vanishes and W C_XX does too.
double orthogonality_residual(const stats::CovarianceSet& cs, const LinearMap& map);

// Expected squared error of (W, b) under the moments in cs:
//   Tr[C_YY - W C_XY - C_YX W^T + W C_XX W^T] + ||E[Y] - W E[X] - b||^2
double quadratic_objective(const stats::CovarianceSet& cs, const Matrix& weight,
                           const Vector& bias);

}  // namespace nbl::lmmse
