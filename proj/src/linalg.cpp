#include "lumen/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "lumen/errors.hpp"

namespace lumen {

namespace {

Matrix orthonormal_basis(const Matrix& a) {
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
}

void fix_signs(TruncatedSVD& r) {
  for (Eigen::Index c = 0; c < r.U.cols(); ++c) {
    Eigen::Index at = 0;
    r.U.col(c).cwiseAbs().maxCoeff(&at);
    if (r.U(at, c) < 0.0) {
      r.U.col(c) *= -1.0;
      r.V.col(c) *= -1.0;
    }
  }
}

}  // namespace

TruncatedSVD truncated_svd(const Matrix& a, int s, const SvdOptions& options) {
  const Eigen::Index m = a.rows(), n = a.cols();
  const Eigen::Index full = std::min(m, n);
  if (s < 1 || s > full) {
    throw ConfigError("truncated_svd: rank " + std::to_string(s) + " outside [1, " + std::to_string(full) + "]");
  }
  if (!a.allFinite()) throw NumericalError("truncated_svd: non-finite input");
  const Eigen::Index k = std::min<Eigen::Index>(s + std::max(0, options.oversampling), full);

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix omega(n, k);
  for (Eigen::Index c = 0; c < k; ++c)
    for (Eigen::Index r = 0; r < n; ++r) omega(r, c) = normal(rng);

  Matrix q = orthonormal_basis(a * omega);
  Vector previous = Vector::Constant(s, -1.0);
  TruncatedSVD out;
  bool values_settled = false;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Matrix w = orthonormal_basis(a.transpose() * q);
    q = orthonormal_basis(a * w);
    // Rayleigh-Ritz on the current left subspace.
    const Matrix b = q.transpose() * a;
    Eigen::JacobiSVD<Matrix> small(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector sv = small.singularValues().head(s);
    const double scale = small.singularValues()(0);
    const double change = (sv - previous).cwiseAbs().maxCoeff();
    previous = sv;
    out.U = q * small.matrixU().leftCols(s);
    out.V = small.matrixV().leftCols(s);
    out.sigma = sv;
    out.iterations = it;
    values_settled = it >= 2 && change <= options.tolerance * scale;
    if (!values_settled) continue;
    // Singular values settle quadratically faster than vectors; also wait for
    // the left residual of the kept triplets.
    const double residual = (a * out.V - out.U * out.sigma.asDiagonal()).colwise().norm().maxCoeff();
    if (residual <= 1e2 * options.tolerance * scale) break;
  }
  if (!values_settled) {
    throw NumericalError("truncated_svd: no convergence after " + std::to_string(options.max_iterations) +
                         " iterations");
  }
  fix_signs(out);
  return out;
}

CenteredSVD centered_truncated_svd(const Matrix& a, int s, const SvdOptions& options) {
  CenteredSVD out;
  out.mean = a.rowwise().mean();
  out.svd = truncated_svd(a.colwise() - out.mean, s, options);
  return out;
}

Matrix finite_difference_operator(int rows, int cols) {
  if (rows < 1 || cols < 1) throw ShapeError("finite_difference_operator: extents must be positive");
  const int nh = rows * (cols - 1), nv = (rows - 1) * cols;
  Matrix d = Matrix::Zero(nh + nv, rows * cols);
  int e = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c + 1 < cols; ++c, ++e) {
      d(e, r * cols + c) = -1.0;
      d(e, r * cols + c + 1) = 1.0;
    }
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c < cols; ++c, ++e) {
      d(e, r * cols + c) = -1.0;
      d(e, (r + 1) * cols + c) = 1.0;
    }
  return d;
}

Matrix ridge_solve(const Matrix& t, const Matrix& z, double lambda_grad, int rows, int cols) {
  if (t.rows() != z.rows()) {
    throw ShapeError("ridge_solve: T has " + std::to_string(t.rows()) + " rows, Z has " + std::to_string(z.rows()));
  }
  if (static_cast<Eigen::Index>(rows) * cols != t.cols()) {
    throw ShapeError("ridge_solve: layout " + std::to_string(rows) + "x" + std::to_string(cols) + " does not match " +
                     std::to_string(t.cols()) + " unknowns");
  }
  if (!(lambda_grad >= 0.0)) throw ConfigError("ridge_solve: lambda_grad must be >= 0");

  Matrix normal = t.transpose() * t;
  if (lambda_grad > 0.0) {
    const Matrix d = finite_difference_operator(rows, cols);
    normal.noalias() += lambda_grad * (d.transpose() * d);
  }
  Eigen::LLT<Matrix> llt(normal);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
    throw NumericalError("ridge_solve: normal equations are singular (lambda_grad = " + std::to_string(lambda_grad) +
                         ")");
  }
  return llt.solve(t.transpose() * z);
}

Matrix ridge_solve(const Matrix& t, const Matrix& z, double lambda_grad) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(t.cols()))));
  if (static_cast<Eigen::Index>(side) * side != t.cols()) {
    throw ShapeError("ridge_solve: " + std::to_string(t.cols()) + " unknowns is not a square layout");
  }
  return ridge_solve(t, z, lambda_grad, side, side);
}

}  // namespace lumen
