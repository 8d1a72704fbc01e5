#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "lumen/autodiff.hpp"
#include "lumen/linalg.hpp"
#include "lumen/nn.hpp"

namespace lumen {

/// d(x, y) = ||grad(x - y)||_1 + w ||x - y||_1 over the two trailing axes.
struct LossSpec {
  double pointwise_weight = 0.05;
};

double loss_eval(const Tensor& x, const Tensor& y, const LossSpec& spec);
Var dip_loss(const Var& x, const Var& y, const LossSpec& spec);

struct FactorizationConfig {
  int inner_dim = 0;  // q; 0 picks min(h, w)
  LossSpec loss;
  int iterations = 20000;
  double learning_rate = 1e-3;
  /// Multiplies the hidden feature counts of the default generators.
  double width_scale = 0.25;
  /// Override the default generators; output shapes must be (1, h, q) and (1, q, w).
  std::optional<NetworkSpec> t_net, l_net;
  std::uint64_t seed = 0;
  /// Called every iteration with (iteration, loss); return false to stop early.
  std::function<bool(int, double)> on_iteration;
};

struct FactorizationResult {
  Matrix t;  // h x q
  Matrix l;  // q x w
  std::vector<double> loss_trace;
  /// ||T L - Z||_1 / ||Z||_1 for the returned factors.
  double residual = 0.0;
};

/// Factors Z into two generator outputs by minimising d(T L, Z) with Adam.
/// Z is scaled to unit mean internally; the scale is split evenly between the
/// returned factors. Both factors come from exp heads, so they are positive.
/// Throws ConfigError for an all-zero or non-finite Z, NumericalError when the
/// loss stops being finite.
FactorizationResult dip_factorize(const Matrix& z, const FactorizationConfig& cfg);

/// Relative L1 residual ||T L - Z||_1 / ||Z||_1.
double product_residual(const Matrix& t, const Matrix& l, const Matrix& z);

/// Ground-truth pairs for the toy factorization experiments.
struct ToyProblem {
  Matrix t, l, z;
};
/// Positive smooth vector: a few wide bumps over a floor.
Vector smooth_positive_vector(int n, std::uint64_t seed);
/// Rank-one product of two smooth positive vectors.
ToyProblem rank_one_toy(int n, std::uint64_t seed);
/// Transport-like factor with three faint curves over a smooth ramp, times a
/// video-like factor whose columns hold moving bumps.
ToyProblem curves_toy(int n, std::uint64_t seed);

}  // namespace lumen
