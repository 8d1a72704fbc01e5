#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lumen/autodiff.hpp"

namespace lumen {

/// Builds a scalar from leaves on a fresh tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Largest norm-wise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// over all inputs, with central differences of step h.
double gradient_rel_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-5);

struct GradCheckReport {
  std::string kind;
  int cases = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Randomized gradient check of every kind in op_kinds(). Each non-scalar
/// output is reduced with a random weighting before differentiation.
std::vector<GradCheckReport> gradcheck_all_ops(int cases, std::uint64_t seed, double h = 1e-5,
                                               double tolerance = 1e-4);

}  // namespace lumen
