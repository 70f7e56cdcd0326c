#include "nbl/cca.hpp"

#include "nbl/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nbl::cca {

Matrix standardized_cross_correlation(const stats::CovarianceSet& cs,
                                      const Regularization& reg) {
  if (cs.h_in() < 1 || cs.h_out() < 1) throw ValidationError("empty covariance set");
  const Matrix cxx_isqrt = spectral::inv_sqrt_psd(spectral::add_ridge(cs.cxx, reg.ridge_rel),
                                                  reg.floor_rel);
  const Matrix cyy_isqrt = spectral::inv_sqrt_psd(cs.cyy, reg.floor_rel);
  return cyy_isqrt * cs.cyx * cxx_isqrt;
}

CcaSpectrum canonical_correlations(const Matrix& cw) {
  CcaSpectrum s;
  s.h_out = cw.rows();
  s.h_in = cw.cols();
  s.rho = spectral::singular_values(cw).cwiseMax(0.0).cwiseMin(1.0);
  std::sort(s.rho.begin(), s.rho.end(), std::greater<>());
  return s;
}

double cca_nmse_bound(const CcaSpectrum& spectrum) {
  const Eigen::Index r = spectrum.rank();
  double bound = static_cast<double>(spectrum.h_out - r);
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(r, spectrum.rho.size()); ++i) {
    bound += 1.0 - spectrum.rho(i) * spectrum.rho(i);
  }
  // rho shorter than r is treated as zero correlations.
  if (spectrum.rho.size() < r) bound += static_cast<double>(r - spectrum.rho.size());
  return bound;
}

double direct_nmse(const stats::CovarianceSet& cs, const Regularization& reg) {
  const double total = cs.cyy.trace();
  if (!(total > 0.0)) throw NumericError("direct NMSE: output has zero variance");
  // Exact second-moment error of W = C_YX (C_XX + ridge)^{-1}:
  //   Tr[C_YY - 2 W C_XY + W C_XX W^T]
  // which is Tr[C_YY - C_YX C_XX^{-1} C_XY] when the ridge is zero.
  const Matrix weight_t =
      spectral::solve_psd(spectral::add_ridge(cs.cxx, reg.ridge_rel), cs.cyx.transpose());
  const Matrix cxy = cs.cyx.transpose();
  const double cross = (weight_t.array() * cxy.array()).sum();
  const double quad = (weight_t.array() * (cs.cxx * weight_t).array()).sum();
  return std::max(0.0, (total - 2.0 * cross + quad) / total);
}

void CosineAccumulator::accumulate_double(const Eigen::Ref<const Matrix>& x,
                                          const Eigen::Ref<const Matrix>& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw ValidationError("cosine score: X and Y shapes differ");
  }
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    const auto xt = x.col(t);
    const Vector resid = xt + y.col(t);
    const double nx = xt.norm();
    const double nr = resid.norm();
    if (nx == 0.0 || nr == 0.0) {
      ++skipped_;
      continue;
    }
    sum_cos_ += std::clamp(xt.dot(resid) / (nx * nr), -1.0, 1.0);
    ++counted_;
  }
}

void CosineAccumulator::merge(const CosineAccumulator& other) {
  sum_cos_ += other.sum_cos_;
  counted_ += other.counted_;
  skipped_ += other.skipped_;
}

double CosineAccumulator::score() const {
  if (counted_ == 0) {
    throw NumericError("cosine score: all " + std::to_string(skipped_) +
                       " tokens had zero norm");
  }
  return std::clamp(1.0 - sum_cos_ / static_cast<double>(counted_), 0.0, 2.0);
}

double cosine_distance_score(const Matrix& x, const Matrix& y) {
  CosineAccumulator acc;
  acc.accumulate(x, y);
  return acc.score();
}

double cosine_distance_score(const ActivationMatrix& x, const ActivationMatrix& y) {
  CosineAccumulator acc;
  acc.accumulate(x, y);
  return acc.score();
}

}  // namespace nbl::cca
