#include "lumen/baselines.hpp"

#include <cmath>
#include <random>

#include "lumen/adam.hpp"
#include "lumen/errors.hpp"
#include "lumen/ops.hpp"

namespace lumen {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor to_tensor(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<RowMajor>(t.ptr(), m.rows(), m.cols()) = m;
  return t;
}

Matrix to_matrix(const Tensor& t) {
  return Eigen::Map<const RowMajor>(t.ptr(), static_cast<Eigen::Index>(t.dim(0)),
                                    static_cast<Eigen::Index>(t.dim(1)));
}

void check_input(const Matrix& z, int q, const char* who) {
  if (z.rows() < 1 || z.cols() < 1) throw ShapeError(std::string(who) + ": empty input");
  if (!z.allFinite()) throw ConfigError(std::string(who) + ": input has non-finite entries");
  if (q < 1 || q > std::min(z.rows(), z.cols())) {
    throw ConfigError(std::string(who) + ": inner dimension must be in [1, min(h, w)]");
  }
}

// Consecutive non-improving iterations before NMF gives up.
constexpr int kNmfPatience = 50;

double softplus_inverse(double y) { return y + std::log(-std::expm1(-y)); }

}  // namespace

NmfResult nmf_als(const Matrix& z, int q, int iterations, std::uint64_t seed) {
  check_input(z, q, "nmf");
  if ((z.array() < 0.0).any()) throw ConfigError("nmf: input must be nonnegative");
  if (iterations < 0) throw ConfigError("nmf: iterations must be >= 0");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  NmfResult r;
  Matrix t = Matrix::NullaryExpr(z.rows(), q, [&] { return u(rng); });
  Matrix l = t.colPivHouseholderQr().solve(z).cwiseMax(0.0);
  r.t = t;
  r.l = l;
  double best = (t * l - z).norm();
  r.error_trace.push_back(best);
  int since_accept = 0;
  for (int it = 0; it < iterations && since_accept < kNmfPatience; ++it) {
    t = l.transpose().colPivHouseholderQr().solve(z.transpose()).transpose().cwiseMax(0.0);
    l = t.colPivHouseholderQr().solve(z).cwiseMax(0.0);
    const double err = (t * l - z).norm();
    if (!std::isfinite(err)) break;
    if (err < best) {
      const bool stalled = best - err <= 1e-15 * best;
      best = err;
      r.t = t;
      r.l = l;
      r.error_trace.push_back(err);
      ++r.accepted;
      since_accept = 0;
      if (stalled) break;
    } else {
      ++since_accept;
    }
  }
  r.residual = product_residual(r.t, r.l, z);
  return r;
}

FactorizationResult direct_entry_factorize(const Matrix& z, const DirectEntryConfig& cfg) {
  const int q = cfg.inner_dim > 0 ? cfg.inner_dim : static_cast<int>(std::min(z.rows(), z.cols()));
  check_input(z, q, "direct");
  const double mean = z.mean();
  if (!(mean > 0.0)) throw ConfigError("direct: input mean must be positive");
  if (cfg.iterations < 0) throw ConfigError("direct: iterations must be >= 0");
  if (cfg.smooth_weight < 0.0) throw ConfigError("direct: smooth weight must be >= 0");

  // Entries start near 1/sqrt(q), which puts the product near unit mean.
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> n(0.0, 0.1);
  const double start = softplus_inverse(1.0 / std::sqrt(static_cast<double>(q)));
  Parameter a(to_tensor(Matrix::NullaryExpr(z.rows(), q, [&] { return start + n(rng); })), "t_raw");
  Parameter b(to_tensor(Matrix::NullaryExpr(q, z.cols(), [&] { return start + n(rng); })), "l_raw");
  Adam adam({&a, &b}, AdamOptions{.learning_rate = cfg.learning_rate});
  const Tensor target = to_tensor(z / mean);

  auto smoothness = [](const Var& x) {
    Var total = l1(finite_diff(x, 0, 1));
    return x.shape()[1] > 1 ? add(total, l1(finite_diff(x, 1, 1))) : total;
  };

  FactorizationResult result;
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int it = 0; it < cfg.iterations; ++it) {
    Tape tape;
    const Var t = softplus(tape.param(a)), l = softplus(tape.param(b));
    Var loss = dip_loss(matmul(t, l), tape.constant(target), cfg.loss);
    if (cfg.smooth_weight > 0.0) {
      Var prior = t.shape()[0] > 1 ? smoothness(transpose(t)) : smoothness(t);
      if (l.shape()[0] > 1) prior = add(prior, smoothness(l));
      loss = add(loss, scale(prior, cfg.smooth_weight));
    }
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw NumericalError("direct: non-finite loss at iteration " + std::to_string(it));
    result.loss_trace.push_back(value);
    adam.zero_grad();
    tape.backward(loss);
    adam.step();
    if (cfg.on_iteration && !cfg.on_iteration(it, value)) break;
  }

  const double split = std::sqrt(mean);
  auto positive = [&](const Tensor& raw) {
    return to_matrix(raw).unaryExpr([](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); });
  };
  result.t = positive(a.value) * split;
  result.l = positive(b.value) * split;
  result.residual = product_residual(result.t, result.l, z);
  return result;
}

double estimate_noise_variance(const Matrix& z) {
  if (z.cols() < 3) throw ShapeError("noise estimate: needs at least 3 frames");
  const Matrix d2 = z.rightCols(z.cols() - 2) - 2.0 * z.middleCols(1, z.cols() - 2) + z.leftCols(z.cols() - 2);
  return d2.squaredNorm() / static_cast<double>(d2.size()) / 6.0;
}

EStepResult levin_e_step(const Matrix& z, const Matrix& l, double noise_variance, const Matrix& prior_precision) {
  const Eigen::Index q = l.rows();
  if (z.cols() != l.cols() || prior_precision.rows() != q || prior_precision.cols() != q) {
    throw ShapeError("e-step: expected z (h x w), l (q x w), prior (q x q)");
  }
  if (!(noise_variance > 0.0)) throw ConfigError("e-step: noise variance must be positive");
  const Matrix precision = l * l.transpose() / noise_variance + prior_precision;
  const Eigen::LLT<Matrix> llt(precision);
  if (llt.info() != Eigen::Success) throw NumericalError("e-step: posterior precision is not positive definite");
  EStepResult r;
  // Row means: t = z L^T / s2 * P^-1, i.e. P t^T = L z^T / s2.
  r.mean = llt.solve(l * z.transpose() / noise_variance).transpose();
  r.var = llt.solve(Matrix::Identity(q, q)).diagonal();
  return r;
}

LevinResult levin_em(const Matrix& z, const LevinConfig& cfg) {
  const int q = cfg.hidden_rows * cfg.hidden_cols;
  if (cfg.hidden_rows < 1 || cfg.hidden_cols < 1) throw ConfigError("levin-em: hidden grid must be at least 1x1");
  check_input(z, q, "levin-em");
  if (!(cfg.prior_weight > 0.0)) throw ConfigError("levin-em: prior weight must be > 0");
  if (cfg.em_rounds < 1) throw ConfigError("levin-em: em_rounds must be >= 1");

  LevinResult r;
  r.noise_variance = cfg.noise_variance > 0.0 ? cfg.noise_variance : estimate_noise_variance(z);
  // Noiseless input would make the prior vanish relative to the data term.
  if (!(r.noise_variance > 0.0)) r.noise_variance = 1e-12 * std::max(z.squaredNorm() / static_cast<double>(z.size()), 1e-300);
  const double s2 = r.noise_variance;
  const Matrix d = finite_difference_operator(cfg.hidden_rows, cfg.hidden_cols);
  const Matrix dtd = d.transpose() * d;
  const double dtd_trace = std::max(dtd.trace(), 1.0);
  const double h = static_cast<double>(z.rows());

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  r.l = Matrix::NullaryExpr(q, z.cols(), [&] { return u(rng); });
  for (int round = 0; round < cfg.em_rounds; ++round) {
    // E-step: Gaussian posterior over each row of T given L.
    const Matrix llt = r.l * r.l.transpose();
    const double lambda_t = cfg.prior_weight * llt.trace() / dtd_trace;
    const EStepResult e = levin_e_step(z, r.l, s2, lambda_t / s2 * dtd);
    r.t_mean = e.mean;
    r.t_var = e.var.transpose().replicate(z.rows(), 1);

    // M-step: E[T^T T] = Tm^T Tm + h diag(var) replaces T^T T in the ridge system.
    const Matrix ett = r.t_mean.transpose() * r.t_mean + Matrix(h * e.var.asDiagonal());
    const double lambda_l = cfg.prior_weight * ett.trace() / dtd_trace;
    const Matrix system = ett + lambda_l * dtd;
    const Eigen::LLT<Matrix> solver(system);
    if (solver.info() != Eigen::Success) throw NumericalError("levin-em: M-step system is singular");
    const Matrix next = solver.solve(r.t_mean.transpose() * z);
    const double change = (next - r.l).norm() / std::max(next.norm(), 1e-300);
    r.l = next;
    r.rounds = round + 1;
    r.residual_trace.push_back(product_residual(r.t_mean, r.l, z));
    if (change < cfg.tolerance) break;
  }
  return r;
}

}  // namespace lumen
