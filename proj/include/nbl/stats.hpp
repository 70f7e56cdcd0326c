#pragma once

#include "nbl/common.hpp"

#include <cstdint>

namespace nbl::stats {

// Means and unbiased (N-1) covariances of paired activations (X, Y).
// C_YX is h_out x h_in.
struct CovarianceSet {
  Vector mean_x;
  Vector mean_y;
  Matrix cxx;
  Matrix cyy;
  Matrix cyx;
  std::uint64_t sample_count = 0;

  Eigen::Index h_in() const { return mean_x.size(); }
  Eigen::Index h_out() const { return mean_y.size(); }
};

// Raw first and second moment sums in double precision. Mergeable, so one
// accumulator per worker and a final merge is the intended pattern.
class MomentAccumulator {
 public:
  MomentAccumulator() = default;
  MomentAccumulator(Eigen::Index h_in, Eigen::Index h_out);

  // Columns are tokens. X and Y must have the same number of columns.
  // Float inputs are widened to double before summation.
  template <typename DX, typename DY>
  void accumulate(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    accumulate_double(x.template cast<double>(), y.template cast<double>());
  }
  void accumulate_double(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& y);

  void merge(const MomentAccumulator& other);

  CovarianceSet finalize() const;

  Eigen::Index h_in() const { return sum_x_.size(); }
  Eigen::Index h_out() const { return sum_y_.size(); }
  std::uint64_t count() const { return count_; }

  const Vector& sum_x() const { return sum_x_; }
  const Vector& sum_y() const { return sum_y_; }
  const Matrix& sum_xx() const { return sum_xx_; }
  const Matrix& sum_yy() const { return sum_yy_; }
  const Matrix& sum_yx() const { return sum_yx_; }

 private:
  std::uint64_t count_ = 0;
  Vector sum_x_;
  Vector sum_y_;
  Matrix sum_xx_;
  Matrix sum_yy_;
  Matrix sum_yx_;
};

MomentAccumulator merge(MomentAccumulator a, const MomentAccumulator& b);

// Moments of (X, X + Y) derived from those of (X, Y). Needs h_in == h_out.
CovarianceSet derive_residual_covset(const CovarianceSet& cs);

// (M + M^T) / 2
Matrix symmetrize(const Matrix& m);

}  // namespace nbl::stats
