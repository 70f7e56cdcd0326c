#pragma once

#include "nbl/common.hpp"
#include "nbl/stats.hpp"

#include <algorithm>
#include <cstdint>

namespace nbl::cca {

// Canonical correlations, descending and clamped to [0, 1].
struct CcaSpectrum {
  Vector rho;
  Eigen::Index h_in = 0;
  Eigen::Index h_out = 0;

  Eigen::Index rank() const { return std::min(h_in, h_out); }
};

// C_YY^{-1/2} * C_YX * (C_XX + ridge)^{-1/2}, h_out x h_in.
Matrix standardized_cross_correlation(const stats::CovarianceSet& cs,
                                      const Regularization& reg = {});

// Singular values of the whitened cross-covariance. h_in/h_out are taken
// from cw's columns/rows.
CcaSpectrum canonical_correlations(const Matrix& cw);

// (h_out - r) + sum_i (1 - rho_i^2), r = min(h_out, h_in).
double cca_nmse_bound(const CcaSpectrum& spectrum);

// NMSE of the LMMSE map fitted to cs: Tr[C_YY - C_YX C_XX^{-1} C_XY] / Tr[C_YY],
// evaluated as the exact quadratic error of the ridge-solved weight so the ridge
// only contributes at second order. Clamped at 0.
double direct_nmse(const stats::CovarianceSet& cs, const Regularization& reg = {});

// Streaming cosine-distance criterion between a block's input x_t and its
// residual output x_t + y_t: 1 - mean_t cos(x_t, x_t + y_t). Tokens where
// either vector has zero norm are skipped and counted.
class CosineAccumulator {
 public:
  template <typename DX, typename DY>
  void accumulate(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    accumulate_double(x.template cast<double>(), y.template cast<double>());
  }
  void accumulate_double(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& y);
  void merge(const CosineAccumulator& other);

  // Throws NumericError if every token was skipped.
  double score() const;

  std::uint64_t counted() const { return counted_; }
  std::uint64_t skipped() const { return skipped_; }

 private:
  double sum_cos_ = 0.0;
  std::uint64_t counted_ = 0;
  std::uint64_t skipped_ = 0;
};

double cosine_distance_score(const ActivationMatrix& x, const ActivationMatrix& y);
double cosine_distance_score(const Matrix& x, const Matrix& y);

}  // namespace nbl::cca
