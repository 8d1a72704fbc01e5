#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lumen/autodiff.hpp"

namespace lumen {

// Elementwise arithmetic. Operands of add/sub/mul must have equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// a * b where b's shape equals the trailing dims of a (b broadcast over the
/// leading dims).
Var mul_trailing(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// Multiplies slice k along axis 0 of x by w[k]; w has shape (x.dim(0)).
Var channel_scale(const Var& x, const Var& w);

// Pointwise nonlinearities.
Var tanh(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var exp(const Var& x);
Var softplus(const Var& x);
/// min(x, hi)
Var clamp_max(const Var& x, double hi);
/// max(x, lo)
Var clamp_min(const Var& x, double lo);

// Reductions to a scalar of shape (1).
Var sum(const Var& x);
Var l1(const Var& x);
Var sumsq(const Var& x);
/// Euclidean norm over all entries; its gradient at the origin is taken as 0.
Var l2norm(const Var& x);

// Structural ops.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);
Var concat(const std::vector<Var>& xs, std::size_t axis);
Var narrow(const Var& x, std::size_t axis, std::size_t start, std::size_t length);

/// Forward difference x[k + interval] - x[k] along `axis`, over valid offsets
/// only; the axis shrinks by `interval`.
Var finite_diff(const Var& x, std::size_t axis, std::size_t interval);

/// Stride-1 "same" convolution (cross-correlation) with zero padding.
/// x: (Cin, S...), w: (Cout, Cin, K...), b: (Cout); 1 to 3 spatial axes.
/// For even K the extra padding goes after the data.
Var conv(const Var& x, const Var& w, const Var& b);
Var conv2d(const Var& x, const Var& w, const Var& b);
Var conv3d(const Var& x, const Var& w, const Var& b);

enum class UpsampleMode { nearest, linear };
/// Doubles one axis. Linear mode uses half-pixel centers with edge clamping.
Var upsample_axis(const Var& x, std::size_t axis, UpsampleMode mode);
Var upsample_nearest(const Var& x, std::span<const std::size_t> axes);
Var upsample_bilinear(const Var& x, std::span<const std::size_t> axes);

/// Attributes for string-dispatched ops.
struct OpAttrs {
  std::size_t axis = 0;
  std::size_t interval = 1;
  std::size_t start = 0;
  std::size_t length = 1;
  double slope = 0.1;
  double bound = 0.0;
  double factor = 1.0;
  Shape shape;
  std::vector<std::size_t> axes;
};

/// Names of every differentiable op kind reachable through forward_op.
const std::vector<std::string>& op_kinds();

/// Applies an op by name. Throws ConfigError for unknown kinds.
Var forward_op(std::string_view kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

}  // namespace lumen
