#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace lumen {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct TruncatedSVD {
  Matrix U;       // m x s, orthonormal columns
  Vector sigma;   // s, nonincreasing
  Matrix V;       // n x s, orthonormal columns
  int iterations = 0;

  int rank() const { return static_cast<int>(sigma.size()); }
  Matrix reconstruct() const { return U * sigma.asDiagonal() * V.transpose(); }
};

struct SvdOptions {
  int oversampling = 8;
  int max_iterations = 200;
  /// Stop once the relative change of every kept singular value drops below this.
  double tolerance = 1e-12;
  std::uint64_t seed = 0;
};

/// Rank-s SVD by randomized subspace iteration. Each column of U has its
/// largest-magnitude entry positive (V flipped to match).
/// Throws ConfigError for s outside [1, min(m, n)], NumericalError when the
/// iteration does not settle.
TruncatedSVD truncated_svd(const Matrix& a, int s, const SvdOptions& options = {});

/// SVD of the column-centred matrix: mean holds the average column, removed
/// before factoring.
struct CenteredSVD {
  Vector mean;
  TruncatedSVD svd;
};
CenteredSVD centered_truncated_svd(const Matrix& a, int s, const SvdOptions& options = {});

/// Forward-difference operator over a rows x cols image stored row-major in
/// a vector of length rows*cols. Horizontal differences first, then vertical.
Matrix finite_difference_operator(int rows, int cols);

/// Minimises ||T L - Z||^2 + lambda ||D L||^2 with D the 2-D finite difference
/// over a rows x cols hidden layout (rows*cols == T.cols()).
/// Throws NumericalError when the normal equations are singular.
Matrix ridge_solve(const Matrix& t, const Matrix& z, double lambda_grad, int rows, int cols);

/// Same with a square layout; T.cols() must be a perfect square.
Matrix ridge_solve(const Matrix& t, const Matrix& z, double lambda_grad);

}  // namespace lumen
