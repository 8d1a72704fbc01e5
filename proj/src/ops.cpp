#include "lumen/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <mutex>
#include <cmath>
#include <memory>

#include "lumen/errors.hpp"
#include "lumen/parallel.hpp"

namespace lumen {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

void require_same_shape(std::string_view op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_same_tape(std::string_view op, const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw Error(std::string(op) + ": operands on different tapes");
}

// Decomposes a shape around `axis` into (outer, n, inner).
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void add_into(Tensor* dst, const Tensor& src, double s = 1.0) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += s * src[i];
}

template <class F, class G>
Var unary(std::string_view name, const Var& x, F f, G dfdx) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return x.tape().record(name, std::move(out), {x}, [x, dfdx](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * dfdx(xv[i]);
  });
}

// Same as unary, but the derivative is written in terms of the output y = f(x).
template <class F, class G>
Var unary_from_output(std::string_view name, const Var& x, F f, G dfdy) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Var y = x.tape().record(name, std::move(out), {x}, {});
  if (!y.requires_grad()) return y;
  x.tape().set_backward(y, [x, y, dfdy](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    const Tensor& yv = y.value();
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * dfdy(yv[i]);
  });
  return y;
}

template <class F, class G>
Var reduce(std::string_view name, const Var& x, F f, G dfdx) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += f(xv[i]);
  return x.tape().record(name, Tensor::scalar(acc), {x}, [x, dfdx](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    const Tensor& xv = x.value();
    const double go = g[0];
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += go * dfdx(xv[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_tape("add", a, b);
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    add_into(t.grad_sink(a), g);
    add_into(t.grad_sink(b), g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape("sub", a, b);
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape().record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    add_into(t.grad_sink(a), g);
    add_into(t.grad_sink(b), g, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape("mul", a, b);
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b.value()[i];
    }
    if (Tensor* gb = t.grad_sink(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a.value()[i];
    }
  });
}

Var mul_trailing(const Var& a, const Var& b) {
  require_same_tape("mul_trailing", a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
    throw ShapeError("mul_trailing: " + shape_string(bs) + " is not a suffix of " +
                     shape_string(as));
  }
  const std::size_t inner = b.value().size();
  const std::size_t outer = a.value().size() / inner;
  Tensor out(as);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < inner; ++k) out[o * inner + k] = a.value()[o * inner + k] * b.value()[k];
  }
  return a.tape().record("mul_trailing", std::move(out), {a, b},
                         [a, b, outer, inner](Tape& t, const Tensor& g) {
                           if (Tensor* ga = t.grad_sink(a)) {
                             for (std::size_t o = 0; o < outer; ++o) {
                               for (std::size_t k = 0; k < inner; ++k) {
                                 (*ga)[o * inner + k] += g[o * inner + k] * b.value()[k];
                               }
                             }
                           }
                           if (Tensor* gb = t.grad_sink(b)) {
                             for (std::size_t o = 0; o < outer; ++o) {
                               for (std::size_t k = 0; k < inner; ++k) {
                                 (*gb)[k] += g[o * inner + k] * a.value()[o * inner + k];
                               }
                             }
                           }
                         });
}

Var scale(const Var& a, double s) {
  return unary("scale", a, [s](double v) { return s * v; }, [s](double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary("add_scalar", a, [s](double v) { return v + s; }, [](double) { return 1.0; });
}

Var channel_scale(const Var& x, const Var& w) {
  require_same_tape("channel_scale", x, w);
  if (x.shape().empty() || w.shape() != Shape{x.shape()[0]}) {
    throw ShapeError("channel_scale: weights " + shape_string(w.shape()) + " do not match " +
                     shape_string(x.shape()));
  }
  const std::size_t c = x.shape()[0];
  const std::size_t inner = x.value().size() / c;
  Tensor out(x.shape());
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < inner; ++i) out[k * inner + i] = x.value()[k * inner + i] * w.value()[k];
  }
  return x.tape().record("channel_scale", std::move(out), {x, w},
                         [x, w, c, inner](Tape& t, const Tensor& g) {
                           Tensor* gx = t.grad_sink(x);
                           Tensor* gw = t.grad_sink(w);
                           for (std::size_t k = 0; k < c; ++k) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < inner; ++i) {
                               const std::size_t idx = k * inner + i;
                               if (gx) (*gx)[idx] += g[idx] * w.value()[k];
                               acc += g[idx] * x.value()[idx];
                             }
                             if (gw) (*gw)[k] += acc;
                           }
                         });
}

Var tanh(const Var& x) {
  return unary_from_output("tanh", x, [](double v) { return std::tanh(v); },
                           [](double y) { return 1.0 - y * y; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary("leaky_relu", x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
               [slope](double v) { return v >= 0.0 ? 1.0 : slope; });
}

Var exp(const Var& x) {
  return unary_from_output("exp", x, [](double v) { return std::exp(v); }, [](double y) { return y; });
}

Var softplus(const Var& x) {
  return unary("softplus", x,
               [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
               [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Var clamp_max(const Var& x, double hi) {
  return unary("clamp_max", x, [hi](double v) { return std::min(v, hi); },
               [hi](double v) { return v < hi ? 1.0 : 0.0; });
}

Var clamp_min(const Var& x, double lo) {
  return unary("clamp_min", x, [lo](double v) { return std::max(v, lo); },
               [lo](double v) { return v > lo ? 1.0 : 0.0; });
}

Var sum(const Var& x) {
  return reduce("sum", x, [](double v) { return v; }, [](double) { return 1.0; });
}

Var l1(const Var& x) {
  return reduce("l1", x, [](double v) { return std::abs(v); },
                [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var sumsq(const Var& x) {
  return reduce("sumsq", x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var l2norm(const Var& x) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i] * xv[i];
  const double norm = std::sqrt(acc);
  return x.tape().record("l2norm", Tensor::scalar(norm), {x}, [x, norm](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx || norm == 0.0) return;
    const double s = g[0] / norm;
    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += s * x.value()[i];
  });
}

Var matmul(const Var& a, const Var& b) {
  require_same_tape("matmul", a, b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out(Shape{m, n});
  RowMap(out.ptr(), m, n).noalias() =
      ConstRowMap(a.value().ptr(), m, k) * ConstRowMap(b.value().ptr(), k, n);
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    ConstRowMap gm(g.ptr(), m, n);
    if (Tensor* ga = t.grad_sink(a)) {
      RowMap(ga->ptr(), m, k).noalias() += gm * ConstRowMap(b.value().ptr(), k, n).transpose();
    }
    if (Tensor* gb = t.grad_sink(b)) {
      RowMap(gb->ptr(), k, n).noalias() += ConstRowMap(a.value().ptr(), m, k).transpose() * gm;
    }
  });
}

Var transpose(const Var& a) {
  if (a.shape().size() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_string(a.shape()));
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out(Shape{n, m});
  RowMap(out.ptr(), n, m) = ConstRowMap(a.value().ptr(), m, n).transpose();
  return a.tape().record("transpose", std::move(out), {a}, [a, m, n](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(a)) {
      RowMap(ga->ptr(), m, n) += ConstRowMap(g.ptr(), n, m).transpose();
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    add_into(t.grad_sink(a), g);
  });
}

Var concat(const std::vector<Var>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& x : xs) {
    require_same_tape("concat", xs[0], x);
    const Shape& s = x.shape();
    if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) {
        throw ShapeError("concat: shape mismatch " + shape_string(s0) + " vs " + shape_string(s));
      }
    }
    out_shape[axis] += s[axis];
  }
  Tensor out(out_shape);
  const AxisSplit os = split_at(out_shape, axis);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const AxisSplit xsplit = split_at(x.shape(), axis);
    const std::size_t block = xsplit.n * xsplit.inner;
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(x.value().ptr() + o * block, block, out.ptr() + (o * os.n + off) * os.inner);
    }
    off += xsplit.n;
  }
  return xs[0].tape().record("concat", std::move(out), xs, [xs, axis, os, offsets](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < xs.size(); ++k) {
      Tensor* gx = t.grad_sink(xs[k]);
      if (!gx) continue;
      const AxisSplit xsplit = split_at(xs[k].shape(), axis);
      const std::size_t block = xsplit.n * xsplit.inner;
      for (std::size_t o = 0; o < os.outer; ++o) {
        const double* src = g.ptr() + (o * os.n + offsets[k]) * os.inner;
        double* dst = gx->ptr() + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    }
  });
}

Var narrow(const Var& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") invalid for axis " + std::to_string(axis) + " of " + shape_string(s));
  }
  Shape out_shape = s;
  out_shape[axis] = length;
  const AxisSplit is = split_at(s, axis);
  Tensor out(out_shape);
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::copy_n(x.value().ptr() + (o * is.n + start) * is.inner, length * is.inner,
                out.ptr() + o * length * is.inner);
  }
  return x.tape().record("narrow", std::move(out), {x}, [x, is, start, length](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    for (std::size_t o = 0; o < is.outer; ++o) {
      const double* src = g.ptr() + o * length * is.inner;
      double* dst = gx->ptr() + (o * is.n + start) * is.inner;
      for (std::size_t i = 0; i < length * is.inner; ++i) dst[i] += src[i];
    }
  });
}

Var finite_diff(const Var& x, std::size_t axis, std::size_t interval) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("finite_diff: axis out of range for " + shape_string(s));
  if (interval == 0 || interval >= s[axis]) {
    throw ShapeError("finite_diff: interval " + std::to_string(interval) + " invalid for extent " +
                     std::to_string(s[axis]));
  }
  const AxisSplit is = split_at(s, axis);
  const std::size_t m = is.n - interval;
  Shape out_shape = s;
  out_shape[axis] = m;
  Tensor out(out_shape);
  const double* xp = x.value().ptr();
  for (std::size_t o = 0; o < is.outer; ++o) {
    for (std::size_t k = 0; k < m; ++k) {
      const double* hi = xp + (o * is.n + k + interval) * is.inner;
      const double* lo = xp + (o * is.n + k) * is.inner;
      double* dst = out.ptr() + (o * m + k) * is.inner;
      for (std::size_t i = 0; i < is.inner; ++i) dst[i] = hi[i] - lo[i];
    }
  }
  return x.tape().record("finite_diff", std::move(out), {x}, [x, is, m, interval](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    for (std::size_t o = 0; o < is.outer; ++o) {
      for (std::size_t k = 0; k < m; ++k) {
        const double* src = g.ptr() + (o * m + k) * is.inner;
        double* hi = gx->ptr() + (o * is.n + k + interval) * is.inner;
        double* lo = gx->ptr() + (o * is.n + k) * is.inner;
        for (std::size_t i = 0; i < is.inner; ++i) {
          hi[i] += src[i];
          lo[i] -= src[i];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution as a sum of shifted GEMMs over a zero-padded copy of the input.
// Every case is lifted to three spatial axes. Output position (od, oh, ow) is
// column q = (od * H' + oh) * W' + ow of the padded grid, and tap (a, b, e)
// reads padded column q + (a * H' + b) * W' + e. Columns with oh >= h or
// ow >= w are computed and thrown away.

namespace {

using StridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StridedMapMut = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

struct ConvGeom {
  std::size_t cin = 0, cout = 0;
  std::size_t d = 1, h = 1, w = 1;     // spatial extents
  std::size_t kd = 1, kh = 1, kw = 1;  // kernel extents
  std::size_t pd = 0, ph = 0, pw = 0;  // leading pad
  std::size_t spatial() const { return d * h * w; }
  std::size_t taps() const { return kd * kh * kw; }
  std::size_t pad_h() const { return h + kh - 1; }
  std::size_t pad_w() const { return w + kw - 1; }
  std::size_t padded() const { return (d + kd - 1) * pad_h() * pad_w(); }
  // One past the last padded column holding a real output.
  std::size_t out_cols() const { return ((d - 1) * pad_h() + (h - 1)) * pad_w() + w; }
  std::size_t offset(std::size_t tap) const {
    const std::size_t e = tap % kw, b = tap / kw % kh, a = tap / (kw * kh);
    return (a * pad_h() + b) * pad_w() + e;
  }
  std::size_t max_offset() const { return offset(taps() - 1); }
};

ConvGeom conv_geometry(const Shape& xs, const Shape& ws, const Shape& bs) {
  const std::size_t nd = xs.size() - 1;
  if (xs.size() < 2 || xs.size() > 4 || ws.size() != nd + 2) {
    throw ShapeError("conv: expected x (C,S...) with 1-3 spatial axes and w (Cout,Cin,K...), got " +
                     shape_string(xs) + " and " + shape_string(ws));
  }
  if (ws[1] != xs[0]) {
    throw ShapeError("conv: input channels " + std::to_string(xs[0]) + " but weights expect " +
                     std::to_string(ws[1]));
  }
  if (bs != Shape{ws[0]}) throw ShapeError("conv: bias shape " + shape_string(bs));
  ConvGeom g;
  g.cin = xs[0];
  g.cout = ws[0];
  std::size_t sp[3] = {1, 1, 1}, kk[3] = {1, 1, 1};
  for (std::size_t i = 0; i < nd; ++i) {
    sp[3 - nd + i] = xs[1 + i];
    kk[3 - nd + i] = ws[2 + i];
  }
  g.d = sp[0], g.h = sp[1], g.w = sp[2];
  g.kd = kk[0], g.kh = kk[1], g.kw = kk[2];
  g.pd = (g.kd - 1) / 2, g.ph = (g.kh - 1) / 2, g.pw = (g.kw - 1) / 2;
  return g;
}

// (channels, d, h, w) -> (channels, padded grid), zeros outside.
RowMat pad_input(const ConvGeom& g, const double* x, std::size_t channels) {
  RowMat out = RowMat::Zero(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(g.padded()));
  const std::size_t ph = g.pad_h(), pw = g.pad_w();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t z = 0; z < g.d; ++z)
      for (std::size_t r = 0; r < g.h; ++r) {
        const double* src = x + ((c * g.d + z) * g.h + r) * g.w;
        std::copy(src, src + g.w, &out(c, ((z + g.pd) * ph + r + g.ph) * pw + g.pw));
      }
  return out;
}

// Padded column of output (z, r, c) relative to the padded-output origin.
std::size_t out_col(const ConvGeom& g, std::size_t z, std::size_t r) { return (z * g.pad_h() + r) * g.pad_w(); }

// Weights rearranged to one (cout x cin) block per tap.
std::vector<RowMat> split_taps(const ConvGeom& g, const Tensor& w) {
  std::vector<RowMat> out(g.taps(), RowMat(g.cout, g.cin));
  for (std::size_t o = 0; o < g.cout; ++o)
    for (std::size_t c = 0; c < g.cin; ++c)
      for (std::size_t t = 0; t < g.taps(); ++t) out[t](o, c) = w[(o * g.cin + c) * g.taps() + t];
  return out;
}

// Splits [0, n) into chunks of about 2048 columns, spread across threads.
template <class F>
void for_column_chunks(std::size_t n, F fn) {
  constexpr std::size_t kChunk = 2048;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t c0, std::size_t c1) {
    for (std::size_t c = c0; c < c1; ++c) fn(c * kChunk, std::min(n, (c + 1) * kChunk));
  });
}

}  // namespace

Var conv(const Var& x, const Var& w, const Var& b) {
  require_same_tape("conv", x, w);
  require_same_tape("conv", x, b);
  const ConvGeom g = conv_geometry(x.shape(), w.shape(), b.shape());
  const std::size_t stride = g.padded();
  const RowMat xpad = pad_input(g, x.value().ptr(), g.cin);
  const std::vector<RowMat> wt = split_taps(g, w.value());

  RowMat ypad(static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(g.out_cols()));
  for_column_chunks(g.out_cols(), [&](std::size_t q0, std::size_t q1) {
    auto block = ypad.middleCols(q0, q1 - q0);
    block.setZero();
    for (std::size_t t = 0; t < g.taps(); ++t) {
      block.noalias() += wt[t] * StridedMap(xpad.data() + q0 + g.offset(t), g.cin, q1 - q0, Eigen::OuterStride<>(stride));
    }
  });

  Shape out_shape = x.shape();
  out_shape[0] = g.cout;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < g.cout; ++o)
    for (std::size_t z = 0; z < g.d; ++z)
      for (std::size_t r = 0; r < g.h; ++r) {
        const double* src = &ypad(o, out_col(g, z, r));
        double* dst = out.ptr() + ((o * g.d + z) * g.h + r) * g.w;
        for (std::size_t c = 0; c < g.w; ++c) dst[c] = src[c] + b.value()[o];
      }

  return x.tape().record("conv", std::move(out), {x, w, b}, [x, w, b, g](Tape& t, const Tensor& grad) {
    if (Tensor* gb = t.grad_sink(b)) {
      const std::size_t n = g.spatial();
      for (std::size_t o = 0; o < g.cout; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += grad[o * n + i];
        (*gb)[o] += acc;
      }
    }
    Tensor* gw = t.grad_sink(w);
    Tensor* gx = t.grad_sink(x);
    if (!gw && !gx) return;

    // Output gradient on the padded grid, with max_offset() zero columns in
    // front so the input gradient can be gathered without bounds checks.
    const std::size_t lead = g.max_offset();
    const std::size_t stride = g.padded();
    RowMat gyext = RowMat::Zero(static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(lead + stride));
    for (std::size_t o = 0; o < g.cout; ++o)
      for (std::size_t z = 0; z < g.d; ++z)
        for (std::size_t r = 0; r < g.h; ++r) {
          const double* src = grad.ptr() + ((o * g.d + z) * g.h + r) * g.w;
          std::copy(src, src + g.w, &gyext(o, lead + out_col(g, z, r)));
        }
    const double* gy = gyext.data() + lead;
    const std::size_t gy_stride = lead + stride;
    const std::size_t nq = g.out_cols();

    if (gw) {
      const RowMat xpad = pad_input(g, x.value().ptr(), g.cin);
      std::mutex merge;
      std::vector<RowMat> total(g.taps(), RowMat::Zero(g.cout, g.cin));
      for_column_chunks(nq, [&](std::size_t q0, std::size_t q1) {
        const StridedMap gq(gy + q0, g.cout, q1 - q0, Eigen::OuterStride<>(gy_stride));
        std::vector<RowMat> part(g.taps());
        for (std::size_t tap = 0; tap < g.taps(); ++tap) {
          part[tap].noalias() =
              gq * StridedMap(xpad.data() + q0 + g.offset(tap), g.cin, q1 - q0, Eigen::OuterStride<>(stride)).transpose();
        }
        std::lock_guard lock(merge);
        for (std::size_t tap = 0; tap < g.taps(); ++tap) total[tap] += part[tap];
      });
      for (std::size_t o = 0; o < g.cout; ++o)
        for (std::size_t c = 0; c < g.cin; ++c)
          for (std::size_t tap = 0; tap < g.taps(); ++tap) (*gw)[(o * g.cin + c) * g.taps() + tap] += total[tap](o, c);
    }

    if (gx) {
      // gxpad[:, p] = sum over taps of W_tap^T gy[:, p - offset(tap)].
      const std::vector<RowMat> wt = split_taps(g, w.value());
      RowMat gxpad(static_cast<Eigen::Index>(g.cin), static_cast<Eigen::Index>(stride));
      for_column_chunks(stride, [&](std::size_t p0, std::size_t p1) {
        auto block = gxpad.middleCols(p0, p1 - p0);
        block.setZero();
        for (std::size_t tap = 0; tap < g.taps(); ++tap) {
          const double* src = gy + p0 - g.offset(tap);
          block.noalias() += wt[tap].transpose() * StridedMap(src, g.cout, p1 - p0, Eigen::OuterStride<>(gy_stride));
        }
      });
      const std::size_t ph = g.pad_h(), pw = g.pad_w();
      for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t z = 0; z < g.d; ++z)
          for (std::size_t r = 0; r < g.h; ++r) {
            const double* src = &gxpad(c, ((z + g.pd) * ph + r + g.ph) * pw + g.pw);
            double* dst = gx->ptr() + ((c * g.d + z) * g.h + r) * g.w;
            for (std::size_t k = 0; k < g.w; ++k) dst[k] += src[k];
          }
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b) {
  if (x.shape().size() != 3) throw ShapeError("conv2d: expected (C,H,W), got " + shape_string(x.shape()));
  return conv(x, w, b);
}

Var conv3d(const Var& x, const Var& w, const Var& b) {
  if (x.shape().size() != 4) throw ShapeError("conv3d: expected (C,D,H,W), got " + shape_string(x.shape()));
  return conv(x, w, b);
}

Var upsample_axis(const Var& x, std::size_t axis, UpsampleMode mode) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("upsample: axis out of range for " + shape_string(s));
  const AxisSplit is = split_at(s, axis);
  const std::size_t m = 2 * is.n;
  Shape out_shape = s;
  out_shape[axis] = m;

  // Each output row along the axis is w0*in[i0] + w1*in[i1].
  struct Tap {
    std::size_t i0, i1;
    double w0, w1;
  };
  std::vector<Tap> taps(m);
  for (std::size_t o = 0; o < m; ++o) {
    if (mode == UpsampleMode::nearest || is.n == 1) {
      taps[o] = {o / 2, o / 2, 1.0, 0.0};
      continue;
    }
    const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src <= 0.0) {
      taps[o] = {0, 0, 1.0, 0.0};
    } else if (src >= static_cast<double>(is.n - 1)) {
      taps[o] = {is.n - 1, is.n - 1, 1.0, 0.0};
    } else {
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      const double f = src - static_cast<double>(i0);
      taps[o] = {i0, i0 + 1, 1.0 - f, f};
    }
  }

  Tensor out(out_shape);
  const double* xp = x.value().ptr();
  for (std::size_t q = 0; q < is.outer; ++q) {
    for (std::size_t o = 0; o < m; ++o) {
      const Tap& tp = taps[o];
      const double* a = xp + (q * is.n + tp.i0) * is.inner;
      const double* c = xp + (q * is.n + tp.i1) * is.inner;
      double* dst = out.ptr() + (q * m + o) * is.inner;
      for (std::size_t i = 0; i < is.inner; ++i) dst[i] = tp.w0 * a[i] + tp.w1 * c[i];
    }
  }
  const char* name = mode == UpsampleMode::nearest ? "upsample_nearest" : "upsample_linear";
  return x.tape().record(name, std::move(out), {x}, [x, is, m, taps](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    for (std::size_t q = 0; q < is.outer; ++q) {
      for (std::size_t o = 0; o < m; ++o) {
        const Tap& tp = taps[o];
        const double* src = g.ptr() + (q * m + o) * is.inner;
        double* a = gx->ptr() + (q * is.n + tp.i0) * is.inner;
        double* c = gx->ptr() + (q * is.n + tp.i1) * is.inner;
        for (std::size_t i = 0; i < is.inner; ++i) {
          a[i] += tp.w0 * src[i];
          c[i] += tp.w1 * src[i];
        }
      }
    }
  });
}

Var upsample_nearest(const Var& x, std::span<const std::size_t> axes) {
  Var y = x;
  for (auto a : axes) y = upsample_axis(y, a, UpsampleMode::nearest);
  return y;
}

Var upsample_bilinear(const Var& x, std::span<const std::size_t> axes) {
  Var y = x;
  for (auto a : axes) y = upsample_axis(y, a, UpsampleMode::linear);
  return y;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& op_kinds() {
  static const std::vector<std::string> kinds = {
      "add",       "sub",         "mul",          "mul_trailing", "scale",    "add_scalar",
      "channel_scale", "tanh",    "leaky_relu",   "exp",          "softplus", "clamp_max",
      "clamp_min", "sum",         "l1",           "sumsq",        "l2norm",   "matmul",
      "transpose", "reshape",     "concat",       "narrow",       "finite_diff", "conv2d",
      "conv3d",    "upsample_nearest", "upsample_bilinear"};
  return kinds;
}

Var forward_op(std::string_view kind, std::span<const Var> in, const OpAttrs& at) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw ShapeError(std::string(kind) + ": expected " + std::to_string(n) + " inputs, got " +
                       std::to_string(in.size()));
    }
  };
  if (kind == "add") return need(2), add(in[0], in[1]);
  if (kind == "sub") return need(2), sub(in[0], in[1]);
  if (kind == "mul") return need(2), mul(in[0], in[1]);
  if (kind == "mul_trailing") return need(2), mul_trailing(in[0], in[1]);
  if (kind == "scale") return need(1), scale(in[0], at.factor);
  if (kind == "add_scalar") return need(1), add_scalar(in[0], at.factor);
  if (kind == "channel_scale") return need(2), channel_scale(in[0], in[1]);
  if (kind == "tanh") return need(1), tanh(in[0]);
  if (kind == "leaky_relu") return need(1), leaky_relu(in[0], at.slope);
  if (kind == "exp") return need(1), exp(in[0]);
  if (kind == "softplus") return need(1), softplus(in[0]);
  if (kind == "clamp_max") return need(1), clamp_max(in[0], at.bound);
  if (kind == "clamp_min") return need(1), clamp_min(in[0], at.bound);
  if (kind == "sum") return need(1), sum(in[0]);
  if (kind == "l1") return need(1), l1(in[0]);
  if (kind == "sumsq") return need(1), sumsq(in[0]);
  if (kind == "l2norm") return need(1), l2norm(in[0]);
  if (kind == "matmul") return need(2), matmul(in[0], in[1]);
  if (kind == "transpose") return need(1), transpose(in[0]);
  if (kind == "reshape") return need(1), reshape(in[0], at.shape);
  if (kind == "concat") return concat(std::vector<Var>(in.begin(), in.end()), at.axis);
  if (kind == "narrow") return need(1), narrow(in[0], at.axis, at.start, at.length);
  if (kind == "finite_diff") return need(1), finite_diff(in[0], at.axis, at.interval);
  if (kind == "conv2d") return need(3), conv2d(in[0], in[1], in[2]);
  if (kind == "conv3d") return need(3), conv3d(in[0], in[1], in[2]);
  if (kind == "upsample_nearest") return need(1), upsample_nearest(in[0], at.axes);
  if (kind == "upsample_bilinear") return need(1), upsample_bilinear(in[0], at.axes);
  throw ConfigError("unknown op kind '" + std::string(kind) + "'");
}

}  // namespace lumen
