#pragma once

// Loop-by-loop reference implementations of the two objectives, written
// without the tape or any tensor op.

#include <cmath>
#include <cstddef>
#include <vector>

#include "lumen/blind.hpp"
#include "lumen/tensor.hpp"

namespace lumen::oracle {

/// Blind objective. Shapes: t (C, P, H), l (C, H, F), z (C, P, F), mask
/// (rows, cols) or empty.
inline BlindLossTerms blind_loss(const Tensor& t, const Tensor& l, const Tensor& z, const Tensor& q0,
                                 const Tensor& mask, int rows, int cols, const BlindWeights& w, int interval) {
  const std::size_t nc = t.dim(0), np = t.dim(1), nh = t.dim(2), nf = l.dim(2);
  auto T = [&](std::size_t c, std::size_t p, std::size_t h) { return t[(c * np + p) * nh + h]; };
  auto keep = [&](std::size_t p) { return mask.empty() || mask[p] == 0.0; };
  BlindLossTerms o;
  std::vector<double> r(nc * np * nf, 0.0);
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t p = 0; p < np; ++p) {
      if (!keep(p)) continue;
      for (std::size_t f = 0; f < nf; ++f) {
        double acc = -z[(c * np + p) * nf + f];
        for (std::size_t h = 0; h < nh; ++h) acc += T(c, p, h) * l[(c * nh + h) * nf + f];
        r[(c * np + p) * nf + f] = acc;
      }
    }
  double sq = 0.0, tv = 0.0;
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t p = 0; p < np; ++p)
      for (std::size_t f = 0; f < nf; ++f) {
        const double v = r[(c * np + p) * nf + f];
        sq += v * v;
        if (f + static_cast<std::size_t>(interval) < nf) tv += std::abs(r[(c * np + p) * nf + f + interval] - v);
      }
  o.data_l2 = w.data_l2 * sq;
  o.temporal_grad = w.temporal_grad * tv;

  double neg = 0.0, smooth = 0.0, color = 0.0;
  for (std::size_t c = 0; c < nc; ++c)
    for (int y = 0; y < rows; ++y)
      for (int x = 0; x < cols; ++x) {
        const std::size_t p = static_cast<std::size_t>(y * cols + x);
        if (!keep(p)) continue;
        for (std::size_t h = 0; h < nh; ++h) {
          const double v = T(c, p, h);
          if (v < 0.0) neg += v * v;
          if (y + 1 < rows && keep(p + cols)) smooth += std::abs(T(c, p + cols, h) - v);
          if (x + 1 < cols && keep(p + 1)) smooth += std::abs(T(c, p + 1, h) - v);
          double mean = 0.0;
          for (std::size_t k = 0; k < nc; ++k) mean += T(k, p, h);
          mean /= static_cast<double>(nc);
          if (nc > 1) color += std::abs(v - mean);
        }
      }
  o.nonneg_t = w.nonneg_t * std::sqrt(neg);
  o.smooth_t = w.smooth_t * smooth;
  o.color_sat = w.color_sat * color;
  double mag = 0.0;
  for (std::size_t k = 0; k < q0.size(); ++k) mag += std::abs(q0[k]);
  o.magnitude_q0 = w.magnitude_q0 * mag;
  o.total = o.data_l2 + o.temporal_grad + o.nonneg_t + o.smooth_t + o.color_sat + o.magnitude_q0;
  o.interval = interval;
  return o;
}

/// Factorization objective on (rows, cols) matrices stored row-major:
/// pointwise_weight * sum |e| plus the L1 norm of the forward differences of e
/// along both axes, e = x - y.
inline double factorization_loss(const Tensor& x, const Tensor& y, double pointwise_weight) {
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  auto e = [&](std::size_t r, std::size_t c) { return x[r * cols + c] - y[r * cols + c]; };
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = e(r, c);
      total += pointwise_weight * std::abs(d);
      if (r + 1 < rows) total += std::abs(e(r + 1, c) - d);
      if (c + 1 < cols) total += std::abs(e(r, c + 1) - d);
    }
  return total;
}

}  // namespace lumen::oracle
