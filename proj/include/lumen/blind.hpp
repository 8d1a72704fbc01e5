#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lumen/autodiff.hpp"
#include "lumen/errors.hpp"
#include "lumen/linalg.hpp"
#include "lumen/nn.hpp"
#include "lumen/scene.hpp"

namespace lumen {

/// Weights of the blind objective's terms.
struct BlindWeights {
  double data_l2 = 0.01;         // ||T L - Z||_2^2
  double temporal_grad = 1.0;    // ||grad_t (T L - Z)||_1
  double nonneg_t = 10.0;        // ||min(T, 0)||_2
  double smooth_t = 0.001;       // ||grad_IJ T||_1
  double color_sat = 0.001;      // ||T - mean_c T||_1
  double magnitude_q0 = 0.0001;  // ||Q_0||_1
};

struct BlindConfig {
  int rank = 32;  // s, singular vectors kept per channel
  int hid_height = 16, hid_width = 16;
  int iterations = 100000;
  double learning_rate = 0.00006;
  BlindWeights weights;
  /// The temporal difference interval is drawn uniformly from this range
  /// each iteration (clipped to t - 1).
  int fd_interval_min = 1, fd_interval_max = 8;
  /// Width multipliers for the mixing-weight and hidden-video generators.
  double q_width_scale = 1.0;
  double l_width_scale = 1.0;
  /// The per-vector scales start at sqrt(sigma). With this set they start at
  /// 1 instead, so sigma enters T once (through U sqrt(Sigma)) rather than
  /// twice.
  bool unit_scale_init = false;
  int checkpoint_every = 500;
  std::uint64_t seed = 0;

  void validate(int frames) const;
};

/// Loss value and its parts, all already weighted.
struct BlindLossTerms {
  double data_l2 = 0.0, temporal_grad = 0.0, nonneg_t = 0.0, smooth_t = 0.0, color_sat = 0.0, magnitude_q0 = 0.0;
  double total = 0.0;
  int interval = 1;
};

/// Symbolic form of the loss.
struct BlindLoss {
  Var total;
  Var data_l2, temporal_grad, nonneg_t, smooth_t, color_sat, magnitude_q0;  // weighted; invalid when skipped
  BlindLossTerms values() const;
};

/// Shapes: t (C, I*J, i*j) with observed pixels as rows, l (C, i*j, frames),
/// z (C, I*J, frames), q0 any shape. `mask` is (I, J) with nonzero entries
/// excluded from every term, or empty for no mask. Priors with weight 0 are
/// left off the tape; the colour prior is skipped for one channel.
BlindLoss blind_loss(const Var& t, const Var& l, const Tensor& z, const Var& q0, const Tensor& mask, int obs_height,
                     int obs_width, const BlindWeights& weights, int interval);

/// Tensor-level evaluation of blind_loss. Shapes as above.
BlindLossTerms blind_loss_eval(const Tensor& t, const Tensor& l, const Tensor& z, const Tensor& q0, const Tensor& mask,
                               int obs_height, int obs_width, const BlindWeights& weights, int interval);

/// T = U sqrt(Sigma) Q + mean 1^T for one channel; q is (s x i*j).
Matrix assemble_transport(const TruncatedSVD& svd, const Matrix& q, const Vector& mean_image);
Var assemble_transport(const TruncatedSVD& svd, const Var& q, const Vector& mean_image);

/// Snapshot handed to the checkpoint callback.
struct BlindCheckpoint {
  int iteration = 0;
  Tensor transport;  // (C, I, J, i, j)
  Tensor hidden;     // (C, t, i, j)
};

struct BlindCallbacks {
  /// Called after every iteration; return false to stop.
  std::function<bool(int, const BlindLossTerms&)> on_iteration;
  std::function<void(const BlindCheckpoint&)> on_checkpoint;
};

struct BlindResult {
  Tensor transport;  // (C, I, J, i, j); masked rows are 0
  Tensor hidden;     // (C, t, i, j)
  std::vector<BlindLossTerms> trace;
  std::vector<int> checkpoints;
  /// Per-channel SVD of the black-subtracted, masked input.
  std::vector<TruncatedSVD> svd;
  std::vector<Vector> mean_image;
};

/// Raised when the loss exceeds 1e6 times its first value or stops being
/// finite; carries the trace up to that point.
class BlindDiverged : public NumericalError {
 public:
  BlindDiverged(const std::string& what, std::vector<BlindLossTerms> trace)
      : NumericalError(what), trace_(std::move(trace)) {}
  const std::vector<BlindLossTerms>& trace() const { return trace_; }

 private:
  std::vector<BlindLossTerms> trace_;
};

/// Jointly trains the mixing-weight and hidden-video generators against the
/// observed video. The black frame is subtracted first and saturated pixels
/// (obs.mask) are dropped from every computation.
BlindResult run_blind(const ObservedVideo& obs, const BlindConfig& cfg, const BlindCallbacks& callbacks = {});

/// Desk-sized configuration used by the scene preset "desk-disks": s = 16,
/// 8x8 hidden, 10k iterations.
BlindConfig desk_blind_config();

}  // namespace lumen
