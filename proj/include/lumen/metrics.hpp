#pragma once

#include <string>

#include "lumen/tensor.hpp"

namespace lumen {

/// Rotation/flip of the two trailing (spatial) axes plus an integer shift and
/// a global intensity scale. Dihedral element d: optional horizontal flip when
/// d >= 4, then d % 4 quarter turns counter-clockwise.
struct AlignmentTransform {
  int dihedral = 0;
  int dx = 0, dy = 0;
  double scale = 1.0;

  std::string describe() const;
};

/// Applies only the dihedral part to the trailing two axes.
Tensor apply_dihedral(const Tensor& x, int element);
int inverse_dihedral(int element);

/// Applies the full transform: dihedral, then shift (vacated pixels are 0),
/// then scale.
Tensor apply_alignment(const Tensor& x, const AlignmentTransform& t);

struct AlignedScore {
  double score = 0.0;
  AlignmentTransform transform;
  bool degenerate = false;  // every frame was constant
};

/// Best mean zero-normalised cross-correlation over all dihedral elements and
/// shifts within `radius`. Leading axes are frames; each frame is correlated on
/// the overlap of the shifted candidate and the reference. Constant frames
/// contribute 0. The reported scale is the least-squares gain on the overlap.
AlignedScore aligned_ncc(const Tensor& candidate, const Tensor& reference, int radius = 2);

/// 10 log10(1 / mse) with peak 1; +infinity for identical inputs.
double psnr(const Tensor& a, const Tensor& b);

/// Sum of absolute forward differences along the two trailing axes.
double total_variation(const Tensor& x);

}  // namespace lumen
