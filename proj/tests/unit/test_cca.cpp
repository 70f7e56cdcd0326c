#include "doctest.h"

#include "nbl/cca.hpp"
#include "nbl/lmmse.hpp"

#include "../test_helpers.hpp"

using namespace nbl;
using namespace nbl::cca;

namespace {

CcaSpectrum spectrum_of(const stats::CovarianceSet& cs) {
  return canonical_correlations(standardized_cross_correlation(cs));
}

stats::CovarianceSet scalar_set(double cxx, double cyy, double cyx) {
  stats::CovarianceSet cs;
  cs.mean_x = Vector::Zero(1);
  cs.mean_y = Vector::Zero(1);
  cs.cxx = Matrix::Constant(1, 1, cxx);
  cs.cyy = Matrix::Constant(1, 1, cyy);
  cs.cyx = Matrix::Constant(1, 1, cyx);
  cs.sample_count = 100;
  return cs;
}

}  // namespace

TEST_CASE("standardized cross-correlation") {
  SUBCASE("scalar") {
    const Matrix cw = standardized_cross_correlation(scalar_set(4, 9, 3), Regularization{0.0, 1e-10});
    CHECK(cw(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("Y = X") {
    std::mt19937_64 rng(21);
    // Well conditioned, so the ridge stays below the tolerance.
    const Matrix x = testing::gaussian(5, 4000, rng);
    const Matrix cw = standardized_cross_correlation(testing::covset(x, x));
    CHECK((cw - Matrix::Identity(5, 5)).norm() <= 1e-6);
    const Matrix exact = standardized_cross_correlation(testing::covset(x, x), Regularization{0.0, 1e-10});
    CHECK((exact - Matrix::Identity(5, 5)).norm() <= 1e-10);
  }
  SUBCASE("independent") {
    std::mt19937_64 rng(22);
    const Matrix cw = standardized_cross_correlation(
        testing::covset(testing::gaussian(4, 100000, rng), testing::gaussian(4, 100000, rng)));
    CHECK(cw.norm() <= 0.1);
  }
}

TEST_CASE("canonical correlations") {
  CHECK(canonical_correlations(Matrix::Identity(3, 3)).rho.isApprox(Vector::Ones(3)));
  CHECK(canonical_correlations(Matrix::Zero(3, 2)).rho.isZero());
  const auto clamped = canonical_correlations(Matrix::Identity(2, 2) * (1.0 + 3e-9));
  CHECK(clamped.rho.maxCoeff() == 1.0);
  const auto shape = canonical_correlations(Matrix::Zero(5, 3));
  CHECK(shape.h_out == 5);
  CHECK(shape.h_in == 3);
  CHECK(shape.rank() == 3);
}

TEST_CASE("nmse bound formula") {
  CcaSpectrum s;
  s.h_in = 3;
  s.h_out = 3;
  s.rho = Vector::Ones(3);
  CHECK(cca_nmse_bound(s) == 0.0);

  s.h_in = 2;
  s.rho = Vector::Ones(2);
  CHECK(cca_nmse_bound(s) == 1.0);

  s.rho = Vector(Eigen::Vector2d(0.5, 0.0));
  CHECK(cca_nmse_bound(s) == doctest::Approx(1.0 + 0.75 + 1.0));
}

TEST_CASE("bound dominates direct nmse") {
  for (int seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(300 + seed);
    const int h_in = testing::uniform_int(1, 10, rng);
    const int h_out = testing::uniform_int(1, 10, rng);
    const Matrix x = testing::gaussian(h_in, h_in, rng) * testing::gaussian(h_in, 3000, rng);
    const Matrix y = testing::gaussian(h_out, h_in, rng) * x +
                     (seed % 3 + 0.1) * testing::gaussian(h_out, 3000, rng);
    const auto cs = testing::covset(x, y);
    CHECK(direct_nmse(cs) <= cca_nmse_bound(spectrum_of(cs)) + 1e-9);
  }
}

TEST_CASE("direct nmse") {
  std::mt19937_64 rng(23);
  SUBCASE("noiseless") {
    const Matrix x = testing::gaussian(6, 2000, rng);
    const Matrix y = testing::gaussian(3, 6, rng) * x;
    CHECK(direct_nmse(testing::covset(x, y)) <= 1e-8);
  }
  SUBCASE("independent") {
    const auto cs =
        testing::covset(testing::gaussian(4, 100000, rng), testing::gaussian(4, 100000, rng));
    CHECK(direct_nmse(cs) == doctest::Approx(1.0).epsilon(0.05));
  }
  SUBCASE("equals empirical MSE of the fitted map") {
    const Matrix x = testing::gaussian(5, 5, rng) * testing::gaussian(5, 5000, rng);
    const Matrix y = testing::gaussian(4, 5, rng) * x.array().sin().matrix() +
                     0.3 * testing::gaussian(4, 5000, rng);
    const auto cs = testing::covset(x, y);
    const auto map = lmmse::fit_lmmse(cs);
    const double mse = (y - lmmse::apply(map, x)).squaredNorm() / 4999.0;
    CHECK(mse / cs.cyy.trace() == doctest::Approx(direct_nmse(cs)).epsilon(1e-6));
  }
  SUBCASE("zero output variance") {
    const auto cs = testing::covset(testing::gaussian(2, 10, rng), Matrix::Ones(2, 10));
    CHECK_THROWS_AS(direct_nmse(cs), NumericError);
  }
}

TEST_CASE("cosine score") {
  std::mt19937_64 rng(24);
  const Matrix x = testing::gaussian(6, 50, rng);
  CHECK(cosine_distance_score(x, Matrix(Matrix::Zero(6, 50))) == doctest::Approx(0.0));
  CHECK(cosine_distance_score(x, Matrix(-2.0 * x)) == doctest::Approx(2.0));
  CHECK(cosine_distance_score(x, x) == doctest::Approx(0.0));

  SUBCASE("matches per-token oracle") {
    const Matrix y = testing::gaussian(6, 50, rng);
    double sum = 0.0;
    for (Eigen::Index t = 0; t < 50; ++t) {
      const Vector r = x.col(t) + y.col(t);
      sum += x.col(t).dot(r) / (x.col(t).norm() * r.norm());
    }
    CHECK(cosine_distance_score(x, y) == doctest::Approx(1.0 - sum / 50.0));
  }
  SUBCASE("zero-norm tokens are skipped") {
    Matrix xz = x;
    xz.col(3).setZero();
    CosineAccumulator acc;
    acc.accumulate(xz, Matrix(Matrix::Zero(6, 50)));
    CHECK(acc.counted() == 49);
    CHECK(acc.skipped() == 1);
    CosineAccumulator none;
    none.accumulate(Matrix(Matrix::Zero(6, 2)), Matrix(Matrix::Zero(6, 2)));
    CHECK_THROWS_AS(none.score(), NumericError);
  }
}
