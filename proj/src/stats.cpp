#include "nbl/stats.hpp"

#include <string>

namespace nbl::stats {

MomentAccumulator::MomentAccumulator(Eigen::Index h_in, Eigen::Index h_out)
    : sum_x_(Vector::Zero(h_in)),
      sum_y_(Vector::Zero(h_out)),
      sum_xx_(Matrix::Zero(h_in, h_in)),
      sum_yy_(Matrix::Zero(h_out, h_out)),
      sum_yx_(Matrix::Zero(h_out, h_in)) {
  if (h_in < 1 || h_out < 1) throw ValidationError("accumulator dims must be >= 1");
}

void MomentAccumulator::accumulate_double(const Eigen::Ref<const Matrix>& x,
                                          const Eigen::Ref<const Matrix>& y) {
  if (x.cols() != y.cols()) {
    throw ValidationError("accumulate: X has " + std::to_string(x.cols()) +
                          " tokens, Y has " + std::to_string(y.cols()));
  }
  if (x.rows() != h_in() || y.rows() != h_out()) {
    throw ValidationError("accumulate: row counts do not match accumulator dims");
  }
  if (x.cols() == 0) return;
  count_ += static_cast<std::uint64_t>(x.cols());
  sum_x_.noalias() += x.rowwise().sum();
  sum_y_.noalias() += y.rowwise().sum();
  // Only the lower triangle is computed; mirrored so the sums stay symmetric.
  sum_xx_.selfadjointView<Eigen::Lower>().rankUpdate(x);
  sum_yy_.selfadjointView<Eigen::Lower>().rankUpdate(y);
  sum_xx_.triangularView<Eigen::StrictlyUpper>() = sum_xx_.transpose();
  sum_yy_.triangularView<Eigen::StrictlyUpper>() = sum_yy_.transpose();
  sum_yx_.noalias() += y * x.transpose();
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  // A default-constructed accumulator has no dims yet and merges as empty.
  if (other.h_in() == 0 && other.count_ == 0) return;
  if (h_in() == 0 && count_ == 0) {
    *this = other;
    return;
  }
  if (other.h_in() != h_in() || other.h_out() != h_out()) {
    throw ValidationError("merge: accumulator dims differ");
  }
  count_ += other.count_;
  sum_x_ += other.sum_x_;
  sum_y_ += other.sum_y_;
  sum_xx_ += other.sum_xx_;
  sum_yy_ += other.sum_yy_;
  sum_yx_ += other.sum_yx_;
}

MomentAccumulator merge(MomentAccumulator a, const MomentAccumulator& b) {
  a.merge(b);
  return a;
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

CovarianceSet MomentAccumulator::finalize() const {
  if (count_ < 2) {
    throw ValidationError("finalize: need at least 2 samples, have " +
                          std::to_string(count_));
  }
  const double n = static_cast<double>(count_);
  CovarianceSet cs;
  cs.sample_count = count_;
  cs.mean_x = sum_x_ / n;
  cs.mean_y = sum_y_ / n;
  cs.cxx = symmetrize((sum_xx_ - n * cs.mean_x * cs.mean_x.transpose()) / (n - 1.0));
  cs.cyy = symmetrize((sum_yy_ - n * cs.mean_y * cs.mean_y.transpose()) / (n - 1.0));
  cs.cyx = (sum_yx_ - n * cs.mean_y * cs.mean_x.transpose()) / (n - 1.0);
  return cs;
}

CovarianceSet derive_residual_covset(const CovarianceSet& cs) {
  if (cs.h_in() != cs.h_out()) {
    throw ValidationError("residual covset needs h_in == h_out (got " +
                          std::to_string(cs.h_in()) + " vs " +
                          std::to_string(cs.h_out()) + ")");
  }
  CovarianceSet r;
  r.sample_count = cs.sample_count;
  r.mean_x = cs.mean_x;
  r.cxx = cs.cxx;
  r.mean_y = cs.mean_y + cs.mean_x;
  r.cyx = cs.cyx + cs.cxx;
  r.cyy = symmetrize(cs.cyy + cs.cyx + cs.cyx.transpose() + cs.cxx);
  return r;
}

}  // namespace nbl::stats
