#include "nbl/spectral.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

namespace nbl::spectral {

namespace {

void require_symmetric(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw ValidationError("expected a square matrix, got " + std::to_string(m.rows()) +
                          "x" + std::to_string(m.cols()));
  }
  const double scale = m.norm();
  if (scale > 0.0 && (m - m.transpose()).norm() > 1e-8 * scale) {
    throw ValidationError("matrix is not symmetric");
  }
}

}  // namespace

EigenPair sym_eig(const Matrix& m) {
  require_symmetric(m);
  if (m.size() == 0) return {};
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw NumericError("symmetric eigendecomposition did not converge");
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

Matrix inv_sqrt_psd(const Matrix& m, double floor_rel) {
  if (!(floor_rel > 0.0)) throw ValidationError("floor_rel must be > 0");
  const EigenPair eig = sym_eig(m);
  if (eig.values.size() == 0) throw NumericError("inverse square root of empty matrix");
  const double lambda_max = eig.values.maxCoeff();
  if (!(lambda_max > 0.0)) {
    throw NumericError("inverse square root of a matrix with no positive eigenvalue");
  }
  const double floor = floor_rel * lambda_max;
  const Vector scale =
      eig.values.unaryExpr([floor](double l) { return 1.0 / std::sqrt(std::max(l, floor)); });
  Matrix out = eig.vectors * scale.asDiagonal() * eig.vectors.transpose();
  return 0.5 * (out + out.transpose());
}

Vector singular_values(const Matrix& m) {
  if (m.size() == 0) return Vector(0);
  Eigen::JacobiSVD<Matrix> svd(m);
  if (svd.info() != Eigen::Success) throw NumericError("SVD did not converge");
  return svd.singularValues();
}

Matrix solve_psd(const Matrix& a, const Matrix& b) {
  if (a.rows() != a.cols() || a.rows() != b.rows()) throw ValidationError("solve_psd: shape mismatch");
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt.solve(b);
  Eigen::LDLT<Matrix> ldlt(a);
  if (ldlt.info() != Eigen::Success) throw NumericError("solve_psd: factorization failed");
  return ldlt.solve(b);
}

Matrix add_ridge(const Matrix& m, double ridge_rel) {
  if (m.rows() != m.cols()) throw ValidationError("ridge needs a square matrix");
  const double trace = m.trace();
  if (m.rows() == 0 || !(trace > 0.0)) return m;
  Matrix out = m;
  out.diagonal().array() += ridge_rel * trace / static_cast<double>(m.rows());
  return out;
}

}  // namespace nbl::spectral
