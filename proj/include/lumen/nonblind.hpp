#pragma once

#include <array>
#include <vector>

#include "lumen/tensor.hpp"

namespace lumen {

struct NonblindResult {
  Tensor hidden;  // (C, t, i, j)
  /// Penalty used for each channel.
  std::vector<double> lambda_grad;
  /// Validation residual per grid point and channel, when the grid was searched.
  std::vector<std::array<double, 2>> grid;  // (lambda, held-out residual)
};

/// Relative penalties of the lambda search; each is multiplied by
/// trace(T^T T) / trace(D^T D).
inline constexpr std::array<double, 5> kLambdaGrid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};

/// Least-squares recovery of L from Z - black_frame with a spatial-gradient
/// penalty, negative values clamped to 0. A negative `lambda_grad` selects the
/// penalty per channel from kLambdaGrid by fitting every 4th frame on 3/4 of
/// the observed pixels and scoring the held-out quarter. Pixels flagged in
/// `mask` (I, J) are dropped from the system.
NonblindResult invert_known_transport(const Tensor& transport, const Tensor& observed, const Tensor& black_frame,
                                      double lambda_grad, const Tensor* mask = nullptr);

}  // namespace lumen
