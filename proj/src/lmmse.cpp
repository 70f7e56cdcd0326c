#include "nbl/lmmse.hpp"

#include "nbl/cca.hpp"
#include "nbl/spectral.hpp"

#include <string>

namespace nbl::lmmse {

LinearMap fit_lmmse(const stats::CovarianceSet& cs, LayerIndex layer,
                    const Regularization& reg) {
  if (cs.sample_count < 2) throw ValidationError("fit_lmmse: need a finalized covariance set");
  if (!(cs.cxx.trace() > 0.0)) throw NumericError("fit_lmmse: input covariance is zero");
  const Matrix weight_t =
      spectral::solve_psd(spectral::add_ridge(cs.cxx, reg.ridge_rel), cs.cyx.transpose());

  LinearMap map;
  map.weight = weight_t.transpose();
  map.bias = cs.mean_y - map.weight * cs.mean_x;
  map.source_layer = layer;
  map.fit_nmse = cs.cyy.trace() > 0.0 ? cca::direct_nmse(cs, reg) : 0.0;
  if (!map.weight.allFinite() || !map.bias.allFinite()) {
    throw NumericError("fit_lmmse: non-finite weights for layer " + std::to_string(layer));
  }
  return map;
}

Matrix apply(const LinearMap& map, const Matrix& x) {
  if (x.rows() != map.h_in()) {
    throw ValidationError("apply: input has " + std::to_string(x.rows()) +
                          " rows, map expects " + std::to_string(map.h_in()));
  }
  Matrix out = map.weight * x;
  out.colwise() += map.bias;
  return out;
}

ActivationMatrix apply(const LinearMap& map, const ActivationMatrix& x) {
  return apply(map, Matrix(x.cast<double>())).cast<float>();
}

double orthogonality_residual(const stats::CovarianceSet& cs, const LinearMap& map) {
  const double denom = cs.cyx.norm();
  const double num = (cs.cyx - map.weight * cs.cxx).norm();
  if (denom == 0.0) return num;
  return num / denom;
}

double quadratic_objective(const stats::CovarianceSet& cs, const Matrix& weight,
                           const Vector& bias) {
  const Matrix wcxy = weight * cs.cyx.transpose();
  const double trace = cs.cyy.trace() - 2.0 * wcxy.trace() +
                       (weight * cs.cxx * weight.transpose()).trace();
  const Vector offset = cs.mean_y - weight * cs.mean_x - bias;
  return trace + offset.squaredNorm();
}

}  // namespace nbl::lmmse
