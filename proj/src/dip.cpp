#include "lumen/dip.hpp"

#include <cmath>
#include <numbers>
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

Matrix to_matrix(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const RowMajor>(t.ptr(), rows, cols);
}

}  // namespace

Var dip_loss(const Var& x, const Var& y, const LossSpec& spec) {
  if (spec.pointwise_weight < 0.0) throw ConfigError("loss: pointwise weight must be >= 0");
  if (x.shape() != y.shape()) {
    throw ShapeError("loss: shapes differ (" + shape_string(x.shape()) + " vs " + shape_string(y.shape()) + ")");
  }
  const std::size_t rank = x.shape().size();
  if (rank < 2) throw ShapeError("loss: needs two spatial axes");
  const Var d = sub(x, y);
  Var total = scale(l1(d), spec.pointwise_weight);
  for (std::size_t axis : {rank - 2, rank - 1}) {
    if (x.shape()[axis] > 1) total = add(total, l1(finite_diff(d, axis, 1)));
  }
  return total;
}

double loss_eval(const Tensor& x, const Tensor& y, const LossSpec& spec) {
  Tape tape;
  return dip_loss(tape.constant(x), tape.constant(y), spec).value().item();
}

double product_residual(const Matrix& t, const Matrix& l, const Matrix& z) {
  return (t * l - z).cwiseAbs().sum() / z.cwiseAbs().sum();
}

FactorizationResult dip_factorize(const Matrix& z, const FactorizationConfig& cfg) {
  const Eigen::Index h = z.rows(), w = z.cols();
  if (h < 1 || w < 1) throw ShapeError("factorize: empty input");
  if (!z.allFinite()) throw ConfigError("factorize: input has non-finite entries");
  if (z.cwiseAbs().maxCoeff() == 0.0) {
    throw ConfigError("factorize: all-zero input has no meaningful factorization (exp heads cannot emit 0)");
  }
  const double mean = z.mean();
  if (!(mean > 0.0)) throw ConfigError("factorize: input mean must be positive");
  const int q = cfg.inner_dim > 0 ? cfg.inner_dim : static_cast<int>(std::min(h, w));
  if (q > std::min(h, w)) throw ConfigError("factorize: inner dimension exceeds min(h, w)");
  if (cfg.iterations < 0) throw ConfigError("factorize: iterations must be >= 0");

  const Matrix zn = z / mean;
  NetworkSpec t_spec = cfg.t_net.value_or(matrix_factor_spec(static_cast<int>(h), q, cfg.width_scale));
  NetworkSpec l_spec = cfg.l_net.value_or(matrix_factor_spec(q, static_cast<int>(w), cfg.width_scale));
  // Unit-mean factors give a unit-mean product.
  if (!cfg.t_net) t_spec.output_scale = 1.0 / std::sqrt(static_cast<double>(q));
  if (!cfg.l_net) l_spec.output_scale = 1.0 / std::sqrt(static_cast<double>(q));
  if (t_spec.output_shape != std::vector<int>{static_cast<int>(h), q} ||
      l_spec.output_shape != std::vector<int>{q, static_cast<int>(w)} || t_spec.output_channels() != 1 ||
      l_spec.output_channels() != 1) {
    throw ShapeError("factorize: generator outputs must be (1, h, q) and (1, q, w)");
  }

  Network t_net(t_spec, cfg.seed * 2 + 1);
  Network l_net(l_spec, cfg.seed * 2 + 2);
  // Mean frame for the T generator, per-frame mean for the L generator.
  const AuxInputs t_aux{{"row_mean", to_tensor(zn.rowwise().mean())}};
  const AuxInputs l_aux{{"row_mean", to_tensor(zn.colwise().mean())}};
  const Tensor target = to_tensor(zn);

  std::vector<Parameter*> params = t_net.parameters();
  for (Parameter* p : l_net.parameters()) params.push_back(p);
  AdamOptions opts;
  opts.learning_rate = cfg.learning_rate;
  Adam adam(params, opts);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  FactorizationResult result;
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int it = 0; it < cfg.iterations; ++it) {
    Tape tape;
    const Var t = reshape(t_net.forward(tape, &dropout_rng, t_aux), {static_cast<std::size_t>(h),
                                                                      static_cast<std::size_t>(q)});
    const Var l = reshape(l_net.forward(tape, &dropout_rng, l_aux), {static_cast<std::size_t>(q),
                                                                      static_cast<std::size_t>(w)});
    const Var loss = dip_loss(matmul(t, l), tape.constant(target), cfg.loss);
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw NumericalError("factorize: non-finite loss at iteration " + std::to_string(it));
    result.loss_trace.push_back(value);
    adam.zero_grad();
    tape.backward(loss);
    adam.step();
    if (cfg.on_iteration && !cfg.on_iteration(it, value)) break;
  }

  Tape tape;
  const double split = std::sqrt(mean);
  result.t = to_matrix(t_net.forward(tape, nullptr, t_aux).value(), h, q) * split;
  result.l = to_matrix(l_net.forward(tape, nullptr, l_aux).value(), q, w) * split;
  result.residual = product_residual(result.t, result.l, z);
  return result;
}

Vector smooth_positive_vector(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector v = Vector::Constant(n, 0.2);
  for (int k = 0; k < 3; ++k) {
    const double centre = u(rng) * (n - 1), width = (0.08 + 0.12 * u(rng)) * n, amp = 0.4 + 0.6 * u(rng);
    for (int i = 0; i < n; ++i) v(i) += amp * std::exp(-0.5 * std::pow((i - centre) / width, 2));
  }
  return v;
}

ToyProblem rank_one_toy(int n, std::uint64_t seed) {
  ToyProblem p;
  p.t = smooth_positive_vector(n, seed * 2 + 11);
  p.l = smooth_positive_vector(n, seed * 2 + 12).transpose();
  p.z = p.t * p.l;
  return p;
}

ToyProblem curves_toy(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ToyProblem p;
  // Rows are observed pixels, columns hidden pixels: a smooth ramp with three faint curves.
  p.t.resize(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) p.t(r, c) = 0.1 + 0.3 * (1.0 - std::abs(r - c) / static_cast<double>(n));
  for (int k = 0; k < 3; ++k) {
    const double base = (0.2 + 0.3 * k + 0.1 * u(rng)) * n, amp = (0.05 + 0.1 * u(rng)) * n;
    const double freq = (1.0 + 1.5 * u(rng)) * 2.0 * std::numbers::pi / n, phase = 2.0 * std::numbers::pi * u(rng);
    const double strength = 0.15 + 0.1 * u(rng);
    for (int c = 0; c < n; ++c) {
      const double centre = base + amp * std::sin(freq * c + phase);
      for (int r = 0; r < n; ++r) p.t(r, c) += strength * std::exp(-0.5 * std::pow((r - centre) / 1.2, 2));
    }
  }
  // Rows are hidden pixels, columns are frames: two bumps drifting back and forth.
  p.l.resize(n, n);
  const double f1 = 2.0 * std::numbers::pi / n * (1.0 + u(rng)), f2 = 2.0 * std::numbers::pi / n * (0.5 + u(rng));
  for (int f = 0; f < n; ++f) {
    const double c1 = 0.3 * n + 0.2 * n * std::sin(f1 * f), c2 = 0.7 * n + 0.15 * n * std::cos(f2 * f);
    for (int r = 0; r < n; ++r) {
      p.l(r, f) = 0.05 + std::exp(-0.5 * std::pow((r - c1) / (0.05 * n), 2)) +
                  0.6 * std::exp(-0.5 * std::pow((r - c2) / (0.08 * n), 2));
    }
  }
  p.z = p.t * p.l;
  return p;
}

}  // namespace lumen
