#include "lumen/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "lumen/errors.hpp"
#include "lumen/parallel.hpp"

namespace lumen {

namespace {

struct Planes {
  std::size_t count, height, width;
};

Planes planes_of(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("expected at least two spatial axes, got " + shape_string(x.shape()));
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  return {x.size() / (h * w), h, w};
}

// Destination of source pixel (r, c) of an h x w plane.
void dihedral_target(int element, std::size_t h, std::size_t w, std::size_t& r, std::size_t& c) {
  if (element >= 4) c = w - 1 - c;
  for (int k = 0; k < element % 4; ++k) {
    // A counter-clockwise quarter turn sends (r, c) of an (h x w) plane to (w-1-c, r) of a (w x h) plane.
    const std::size_t nr = w - 1 - c, nc = r;
    r = nr;
    c = nc;
    std::swap(h, w);
  }
}

}  // namespace

std::string AlignmentTransform::describe() const {
  static const char* names[8] = {"identity", "rot90", "rot180", "rot270",
                                 "flip",     "flip+rot90", "flip+rot180", "flip+rot270"};
  return std::string(names[dihedral & 7]) + " shift=(" + std::to_string(dx) + "," + std::to_string(dy) +
         ") scale=" + std::to_string(scale);
}

Tensor apply_dihedral(const Tensor& x, int element) {
  if (element < 0 || element > 7) throw ConfigError("dihedral element must be in [0, 7]");
  const Planes p = planes_of(x);
  Shape shape = x.shape();
  if (element % 2) std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor out(shape);
  const std::size_t oh = shape[shape.size() - 2], ow = shape[shape.size() - 1];
  for (std::size_t k = 0; k < p.count; ++k)
    for (std::size_t r = 0; r < p.height; ++r)
      for (std::size_t c = 0; c < p.width; ++c) {
        std::size_t tr = r, tc = c;
        dihedral_target(element, p.height, p.width, tr, tc);
        out[(k * oh + tr) * ow + tc] = x[(k * p.height + r) * p.width + c];
      }
  return out;
}

int inverse_dihedral(int element) {
  if (element < 4) return (4 - element) % 4;
  return element;  // flips composed with rotations are involutions
}

Tensor apply_alignment(const Tensor& x, const AlignmentTransform& t) {
  const Tensor d = apply_dihedral(x, t.dihedral);
  const Planes p = planes_of(d);
  Tensor out(d.shape());
  for (std::size_t k = 0; k < p.count; ++k)
    for (std::size_t r = 0; r < p.height; ++r)
      for (std::size_t c = 0; c < p.width; ++c) {
        const long sr = static_cast<long>(r) - t.dy, sc = static_cast<long>(c) - t.dx;
        if (sr < 0 || sc < 0 || sr >= static_cast<long>(p.height) || sc >= static_cast<long>(p.width)) continue;
        out[(k * p.height + r) * p.width + c] = t.scale * d[(k * p.height + sr) * p.width + sc];
      }
  return out;
}

AlignedScore aligned_ncc(const Tensor& candidate, const Tensor& reference, int radius) {
  if (radius < 0) throw ConfigError("aligned_ncc: radius must be >= 0");
  const Planes ref = planes_of(reference);
  const Planes cand = planes_of(candidate);
  if (cand.count != ref.count) {
    throw ShapeError("aligned_ncc: frame counts differ (" + shape_string(candidate.shape()) + " vs " +
                     shape_string(reference.shape()) + ")");
  }

  const int side = 2 * radius + 1;
  const int total = 8 * side * side;
  std::vector<double> scores(total, -std::numeric_limits<double>::infinity());
  std::vector<double> gains(total, 0.0);
  std::vector<char> all_flat(total, 1);
  std::vector<Tensor> rotated(8);
  for (int e = 0; e < 8; ++e) {
    const bool swaps = e % 2;
    const std::size_t h = swaps ? cand.width : cand.height, w = swaps ? cand.height : cand.width;
    if (h == ref.height && w == ref.width) rotated[e] = apply_dihedral(candidate, e);
  }

  parallel_for(static_cast<std::size_t>(total), [&](std::size_t begin, std::size_t end) {
    for (std::size_t idx = begin; idx < end; ++idx) {
      const int e = static_cast<int>(idx) / (side * side);
      if (rotated[e].empty()) continue;
      const int dy = static_cast<int>(idx) / side % side - radius, dx = static_cast<int>(idx) % side - radius;
      const long h = static_cast<long>(ref.height), w = static_cast<long>(ref.width);
      const long r0 = std::max(0L, static_cast<long>(dy)), r1 = std::min(h, h + dy);
      const long c0 = std::max(0L, static_cast<long>(dx)), c1 = std::min(w, w + dx);
      if (r1 - r0 < 1 || c1 - c0 < 1) continue;
      const double n = static_cast<double>((r1 - r0) * (c1 - c0));
      const Tensor& x = rotated[e];
      double sum = 0.0, num = 0.0, den = 0.0;
      bool flat = true;
      for (std::size_t k = 0; k < ref.count; ++k) {
        double sa = 0.0, sb = 0.0;
        for (long r = r0; r < r1; ++r)
          for (long c = c0; c < c1; ++c) {
            sa += x[(k * ref.height + (r - dy)) * ref.width + (c - dx)];
            sb += reference[(k * ref.height + r) * ref.width + c];
          }
        const double ma = sa / n, mb = sb / n;
        double vab = 0.0, vaa = 0.0, vbb = 0.0, raw_ab = 0.0, raw_aa = 0.0, raw_bb = 0.0;
        for (long r = r0; r < r1; ++r)
          for (long c = c0; c < c1; ++c) {
            const double a = x[(k * ref.height + (r - dy)) * ref.width + (c - dx)];
            const double b = reference[(k * ref.height + r) * ref.width + c];
            vab += (a - ma) * (b - mb);
            vaa += (a - ma) * (a - ma);
            vbb += (b - mb) * (b - mb);
            raw_ab += a * b;
            raw_aa += a * a;
            raw_bb += b * b;
          }
        num += raw_ab;
        den += raw_aa;
        // Frames with no variation relative to their energy count as 0.
        if (vaa > 1e-20 * raw_aa && vbb > 1e-20 * raw_bb && vaa > 0.0 && vbb > 0.0) {
          sum += vab / std::sqrt(vaa * vbb);
          flat = false;
        }
      }
      scores[idx] = sum / static_cast<double>(ref.count);
      gains[idx] = den > 0.0 ? num / den : 0.0;
      all_flat[idx] = flat;
    }
  });

  AlignedScore best;
  best.score = -std::numeric_limits<double>::infinity();
  bool any = false;
  bool every_flat = true;
  for (int idx = 0; idx < total; ++idx) {
    if (scores[idx] == -std::numeric_limits<double>::infinity()) continue;
    any = true;
    every_flat = every_flat && all_flat[idx];
    // Prefer the smallest shift on ties so identical inputs report identity.
    const int e = idx / (side * side), dy = idx / side % side - radius, dx = idx % side - radius;
    const bool better = scores[idx] > best.score + 1e-12 ||
                        (std::abs(scores[idx] - best.score) <= 1e-12 &&
                         std::abs(dx) + std::abs(dy) < std::abs(best.transform.dx) + std::abs(best.transform.dy));
    if (better) {
      best.score = scores[idx];
      best.transform = {e, dx, dy, gains[idx]};
    }
  }
  if (!any) throw ShapeError("aligned_ncc: no dihedral element maps the candidate onto the reference shape");
  if (every_flat) {
    best.score = 0.0;
    best.transform = {};
    best.degenerate = true;
  }
  return best;
}

double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("psnr: shapes differ (" + shape_string(a.shape()) + " vs " + shape_string(b.shape()) + ")");
  }
  double mse = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) mse += (a[k] - b[k]) * (a[k] - b[k]);
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double total_variation(const Tensor& x) {
  const Planes p = planes_of(x);
  double tv = 0.0;
  for (std::size_t k = 0; k < p.count; ++k)
    for (std::size_t r = 0; r < p.height; ++r)
      for (std::size_t c = 0; c < p.width; ++c) {
        const double v = x[(k * p.height + r) * p.width + c];
        if (c + 1 < p.width) tv += std::abs(x[(k * p.height + r) * p.width + c + 1] - v);
        if (r + 1 < p.height) tv += std::abs(x[(k * p.height + r + 1) * p.width + c] - v);
      }
  return tv;
}

}  // namespace lumen
