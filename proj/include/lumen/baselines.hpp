#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lumen/dip.hpp"
#include "lumen/linalg.hpp"

namespace lumen {

// ---------------------------------------------------------------------------
// Non-negative matrix factorization by alternating least squares.

struct NmfResult {
  Matrix t;  // h x q
  Matrix l;  // q x w
  /// Frobenius error ||T L - Z|| after the initial solve and every accepted iteration.
  std::vector<double> error_trace;
  int accepted = 0;
  /// ||T L - Z||_1 / ||Z||_1.
  double residual = 0.0;
};

/// Each iteration solves T = argmin ||T L - Z|| and L = argmin ||T L - Z||
/// by least squares and clamps negatives to 0. Only iterates that lower the
/// best error so far are accepted (returned and traced), so error_trace is
/// decreasing. Stops after 50 iterations without an accepted one.
NmfResult nmf_als(const Matrix& z, int q, int iterations, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Factorization over raw matrix entries with an L1 smoothness prior.

struct DirectEntryConfig {
  int inner_dim = 0;  // 0 picks min(h, w)
  LossSpec loss;
  double smooth_weight = 0.1;
  int iterations = 20000;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
  std::function<bool(int, double)> on_iteration;
};

/// T = softplus(A), L = softplus(B); minimises d(T L, Z) + smooth_weight *
/// (||grad T||_1 + ||grad L||_1) over A and B with Adam. Z is scaled to unit
/// mean internally, as in dip_factorize.
FactorizationResult direct_entry_factorize(const Matrix& z, const DirectEntryConfig& cfg);

// ---------------------------------------------------------------------------
// Variational EM over (T, L) with Gaussian smoothness priors.
//
// Columns of T and rows of L are indexed by hidden pixels on a rows x cols
// grid; columns of Z are frames.

struct LevinConfig {
  int hidden_rows = 0;
  int hidden_cols = 0;
  /// Gradient prior strength on T rows and L frames, relative to the data
  /// term's scale (trace ratio, as in the non-blind solver).
  double prior_weight = 1e-3;
  int em_rounds = 30;
  /// Stop once ||L_k - L_{k-1}|| / ||L_k|| drops below this.
  double tolerance = 1e-4;
  /// Noise variance; <= 0 estimates it from Z's temporal second differences.
  double noise_variance = -1.0;
  std::uint64_t seed = 0;
};

struct LevinResult {
  Matrix t_mean;  // h x q
  Matrix t_var;   // h x q, diagonal posterior variances
  Matrix l;       // q x w
  double noise_variance = 0.0;
  /// ||T_mean L - Z||_1 / ||Z||_1 after every round.
  std::vector<double> residual_trace;
  int rounds = 0;
};

LevinResult levin_em(const Matrix& z, const LevinConfig& cfg);

struct EStepResult {
  Matrix mean;  // h x q, posterior mean of each row of T
  Vector var;   // q, diagonal of the posterior covariance (shared by all rows)
};

/// Posterior of each row t of T under z_row = t L + noise, noise ~ N(0, s2 I),
/// t ~ N(0, prior_precision^-1). All rows share the precision
/// L L^T / s2 + prior_precision.
EStepResult levin_e_step(const Matrix& z, const Matrix& l, double noise_variance, const Matrix& prior_precision);

/// White-noise variance from second differences along the columns (frames):
/// mean squared (z[f+1] - 2 z[f] + z[f-1]) / 6.
double estimate_noise_variance(const Matrix& z);

}  // namespace lumen
