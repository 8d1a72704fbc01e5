#include <gtest/gtest.h>

#include <random>

#include "lumen/errors.hpp"
#include "lumen/linalg.hpp"

using namespace lumen;

namespace {

Matrix random_matrix(int m, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix a(m, n);
  for (int c = 0; c < n; ++c)
    for (int r = 0; r < m; ++r) a(r, c) = g(rng);
  return a;
}

double orthonormality_error(const Matrix& q) {
  return (q.transpose() * q - Matrix::Identity(q.cols(), q.cols())).cwiseAbs().maxCoeff();
}

}  // namespace

TEST(TruncatedSvd, IdentityRank2) {
  const TruncatedSVD r = truncated_svd(Matrix::Identity(4, 4), 2);
  EXPECT_NEAR(r.sigma(0), 1.0, 1e-14);
  EXPECT_NEAR(r.sigma(1), 1.0, 1e-14);
}

TEST(TruncatedSvd, RankOneOuterProduct) {
  Vector u(5), v(3);
  u << 1, -2, 3, 0.5, 1;
  v << 2, 1, -1;
  const Matrix a = u * v.transpose();
  const TruncatedSVD r = truncated_svd(a, 1);
  EXPECT_NEAR(r.sigma(0), u.norm() * v.norm(), 1e-12);
  EXPECT_LT((a - r.reconstruct()).norm(), 1e-12);
}

TEST(TruncatedSvd, MatchesDenseOracle) {
  const Matrix a = random_matrix(100, 80, 11);
  const TruncatedSVD r = truncated_svd(a, 8);
  Eigen::BDCSVD<Matrix> full(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  for (int k = 0; k < 8; ++k) {
    EXPECT_NEAR(r.sigma(k), full.singularValues()(k), 1e-8 * full.singularValues()(k));
    const double su = r.U.col(k).dot(full.matrixU().col(k)) > 0 ? 1.0 : -1.0;
    EXPECT_LT((r.U.col(k) - su * full.matrixU().col(k)).norm(), 1e-8) << k;
    EXPECT_LT((r.V.col(k) - su * full.matrixV().col(k)).norm(), 1e-8) << k;
  }
}

TEST(TruncatedSvd, InvariantsOnRandomMatrices) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const int m = 20 + 7 * static_cast<int>(seed), n = 15 + 3 * static_cast<int>(seed);
    const Matrix a = random_matrix(m, n, 100 + seed);
    const int s = 1 + static_cast<int>(seed) * 2;
    const TruncatedSVD r = truncated_svd(a, s, {.seed = seed});
    EXPECT_LE(orthonormality_error(r.U), 1e-10);
    EXPECT_LE(orthonormality_error(r.V), 1e-10);
    for (int k = 0; k + 1 < s; ++k) EXPECT_GE(r.sigma(k), r.sigma(k + 1));
    for (int k = 0; k < s; ++k) {
      Eigen::Index at = 0;
      r.U.col(k).cwiseAbs().maxCoeff(&at);
      EXPECT_GT(r.U(at, k), 0.0);
    }
    // Eckart-Young: residual equals the tail of the spectrum.
    Eigen::BDCSVD<Matrix> full(a);
    const double tail = full.singularValues().tail(full.singularValues().size() - s).squaredNorm();
    EXPECT_NEAR((a - r.reconstruct()).squaredNorm(), tail, 1e-9 * a.squaredNorm());
  }
}

TEST(TruncatedSvd, Deterministic) {
  const Matrix a = random_matrix(30, 20, 5);
  const TruncatedSVD r1 = truncated_svd(a, 4, {.seed = 9});
  const TruncatedSVD r2 = truncated_svd(a, 4, {.seed = 9});
  EXPECT_EQ(r1.U, r2.U);
  EXPECT_EQ(r1.sigma, r2.sigma);
}

TEST(TruncatedSvd, RankOutOfRange) {
  EXPECT_THROW(truncated_svd(Matrix::Identity(4, 3), 0), ConfigError);
  EXPECT_THROW(truncated_svd(Matrix::Identity(4, 3), 4), ConfigError);
}

TEST(TruncatedSvd, ZeroMatrix) {
  const TruncatedSVD r = truncated_svd(Matrix::Zero(6, 4), 2);
  EXPECT_EQ(r.sigma(0), 0.0);
}

TEST(TruncatedSvd, CenteredRemovesMean) {
  Matrix a = random_matrix(12, 9, 3);
  a.colwise() += Vector::LinSpaced(12, 5.0, 8.0);
  const CenteredSVD c = centered_truncated_svd(a, 8);
  EXPECT_NEAR((c.mean - a.rowwise().mean()).norm(), 0.0, 1e-14);
  const Matrix full = c.svd.reconstruct().colwise() + c.mean;
  // Centering removes one dimension, so rank 8 of 9 columns is exact.
  EXPECT_LT((full - a).norm(), 1e-10);
}

TEST(RidgeSolve, IdentityNoPenalty) {
  const Matrix z = random_matrix(9, 4, 1);
  EXPECT_LT((ridge_solve(Matrix::Identity(9, 9), z, 0.0) - z).norm(), 1e-14);
}

TEST(RidgeSolve, ZeroRhs) {
  const Matrix t = random_matrix(20, 9, 2);
  EXPECT_EQ(ridge_solve(t, Matrix::Zero(20, 3), 0.5).norm(), 0.0);
}

TEST(RidgeSolve, MatchesStackedLeastSquaresOracle) {
  const Matrix t = random_matrix(40, 25, 3);
  const Matrix z = random_matrix(40, 6, 4);
  const double lambda = 1e-3;
  const Matrix l = ridge_solve(t, z, lambda, 5, 5);

  const Matrix d = finite_difference_operator(5, 5);
  Matrix stacked(t.rows() + d.rows(), t.cols());
  stacked << t, std::sqrt(lambda) * d;
  Matrix rhs = Matrix::Zero(stacked.rows(), z.cols());
  rhs.topRows(t.rows()) = z;
  const Matrix oracle = stacked.colPivHouseholderQr().solve(rhs);
  EXPECT_LT((l - oracle).cwiseAbs().maxCoeff(), 1e-8);

  const Matrix grad = 2.0 * (t.transpose() * (t * l - z) + lambda * d.transpose() * d * l);
  EXPECT_LE(grad.norm(), 1e-8 * z.norm());
}

TEST(RidgeSolve, PenaltyTradeoffIsMonotone) {
  const Matrix t = random_matrix(30, 16, 8);
  const Matrix z = random_matrix(30, 2, 9);
  const Matrix d = finite_difference_operator(4, 4);
  double last_fit = -1.0, last_smooth = 1e300;
  for (double lambda : {0.0, 1e-2, 1e-1, 1.0, 10.0}) {
    const Matrix l = ridge_solve(t, z, lambda, 4, 4);
    const double fit = (t * l - z).squaredNorm(), smooth = (d * l).squaredNorm();
    EXPECT_GE(fit, last_fit - 1e-12);
    EXPECT_LE(smooth, last_smooth + 1e-12);
    last_fit = fit;
    last_smooth = smooth;
  }
}

TEST(RidgeSolve, SingularWithoutPenalty) {
  Matrix t = random_matrix(10, 4, 1);
  t.col(3) = t.col(0);
  EXPECT_THROW(ridge_solve(t, random_matrix(10, 1, 2), 0.0, 2, 2), NumericalError);
  EXPECT_NO_THROW(ridge_solve(t, random_matrix(10, 1, 2), 0.1, 2, 2));
}

TEST(RidgeSolve, LayoutMismatch) {
  EXPECT_THROW(ridge_solve(Matrix::Identity(6, 6), Matrix::Zero(6, 1), 0.0), ShapeError);
  EXPECT_THROW(ridge_solve(Matrix::Identity(6, 6), Matrix::Zero(5, 1), 0.0, 2, 3), ShapeError);
}

TEST(FiniteDifference, Counts) {
  const Matrix d = finite_difference_operator(3, 4);
  EXPECT_EQ(d.rows(), 3 * 3 + 2 * 4);
  EXPECT_LT((d * Vector::Ones(12)).norm(), 1e-15);
}
