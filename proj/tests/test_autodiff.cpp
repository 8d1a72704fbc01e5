#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lumen/adam.hpp"
#include "lumen/errors.hpp"
#include "lumen/gradcheck.hpp"
#include "lumen/ops.hpp"

using namespace lumen;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Zero-padded "same" cross-correlation, written as plain nested loops.
Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const long ph = (static_cast<long>(kh) - 1) / 2, pw = (static_cast<long>(kw) - 1) / 2;
  Tensor y({cout, h, wd});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < wd; ++c) {
        double acc = b[o];
        for (std::size_t i = 0; i < cin; ++i)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t e = 0; e < kw; ++e) {
              const long rr = static_cast<long>(r + a) - ph, cc = static_cast<long>(c + e) - pw;
              if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(wd)) continue;
              acc += w[((o * cin + i) * kh + a) * kw + e] * x[(i * h + rr) * wd + cc];
            }
        y[(o * h + r) * wd + c] = acc;
      }
  return y;
}

Tensor naive_conv3d(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t cin = x.dim(0), d = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const long pd = (static_cast<long>(kd) - 1) / 2, ph = (static_cast<long>(kh) - 1) / 2,
             pw = (static_cast<long>(kw) - 1) / 2;
  Tensor y({cout, d, h, wd});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t z = 0; z < d; ++z)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < wd; ++c) {
          double acc = b[o];
          for (std::size_t i = 0; i < cin; ++i)
            for (std::size_t a = 0; a < kd; ++a)
              for (std::size_t f = 0; f < kh; ++f)
                for (std::size_t e = 0; e < kw; ++e) {
                  const long zz = static_cast<long>(z + a) - pd, rr = static_cast<long>(r + f) - ph,
                             cc = static_cast<long>(c + e) - pw;
                  if (zz < 0 || rr < 0 || cc < 0 || zz >= static_cast<long>(d) ||
                      rr >= static_cast<long>(h) || cc >= static_cast<long>(wd))
                    continue;
                  acc += w[(((o * cin + i) * kd + a) * kh + f) * kw + e] * x[((i * d + zz) * h + rr) * wd + cc];
                }
          y[((o * d + z) * h + r) * wd + c] = acc;
        }
  return y;
}

}  // namespace

TEST(Conv, IdentityKernelIsIdentity) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 2, 2}, {1, 2, 3, 4}));
  Var k = tape.constant(Tensor({1, 1, 1, 1}, {1.0}));
  Var b = tape.constant(Tensor({1}, {0.0}));
  const Tensor& y = conv2d(x, k, b).value();
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(y.storage(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Conv, Random5x5MatchesNaiveLoops) {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({1, 5, 5}, rng);
  const Tensor w = random_tensor({1, 1, 3, 3}, rng);
  const Tensor b = random_tensor({1}, rng);
  Tape tape;
  const Tensor y = conv2d(tape.constant(x), tape.constant(w), tape.constant(b)).value();
  const Tensor ref = naive_conv2d(x, w, b);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv, MultiChannelEvenKernelsMatchNaiveLoops) {
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor({3, 6, 7}, rng);
  const Tensor w = random_tensor({4, 3, 4, 4}, rng);
  const Tensor b = random_tensor({4}, rng);
  Tape tape;
  const Tensor y = conv2d(tape.constant(x), tape.constant(w), tape.constant(b)).value();
  const Tensor ref = naive_conv2d(x, w, b);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv, Conv3dMatchesNaiveLoops) {
  std::mt19937_64 rng(13);
  const Tensor x = random_tensor({2, 4, 5, 3}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3, 3}, rng);
  const Tensor b = random_tensor({3}, rng);
  Tape tape;
  const Tensor y = conv3d(tape.constant(x), tape.constant(w), tape.constant(b)).value();
  const Tensor ref = naive_conv3d(x, w, b);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

// 3D volume large enough that the forward and both backward passes span
// several column chunks.
TEST(Conv, LargeConv3dValuesAndGradientsMatchNaiveLoops) {
  std::mt19937_64 rng(14);
  const Tensor x = random_tensor({2, 5, 24, 40}, rng);
  const Tensor w = random_tensor({3, 2, 3, 4, 3}, rng);
  const Tensor b = random_tensor({3}, rng);
  const Tensor g = random_tensor({3, 5, 24, 40}, rng);
  Tape tape;
  const Var xv = tape.leaf(x), wv = tape.leaf(w), bv = tape.leaf(b);
  const Var y = conv3d(xv, wv, bv);
  const Tensor ref = naive_conv3d(x, w, b);
  for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y.value()[i], ref[i], 1e-12);
  tape.backward(sum(mul(y, tape.constant(g))));

  // Adjoint loops for sum(g * conv(x)).
  const long d = 5, h = 24, wd = 40, kd = 3, kh = 4, kw = 3, pd = 1, ph = 1, pw = 1;
  Tensor gx(x.shape()), gw(w.shape()), gb(b.shape());
  for (long o = 0; o < 3; ++o)
    for (long z = 0; z < d; ++z)
      for (long r = 0; r < h; ++r)
        for (long c = 0; c < wd; ++c) {
          const double go = g[static_cast<std::size_t>(((o * d + z) * h + r) * wd + c)];
          gb[static_cast<std::size_t>(o)] += go;
          for (long i = 0; i < 2; ++i)
            for (long a = 0; a < kd; ++a)
              for (long f = 0; f < kh; ++f)
                for (long e = 0; e < kw; ++e) {
                  const long zz = z + a - pd, rr = r + f - ph, cc = c + e - pw;
                  if (zz < 0 || rr < 0 || cc < 0 || zz >= d || rr >= h || cc >= wd) continue;
                  const auto wi = static_cast<std::size_t>((((o * 2 + i) * kd + a) * kh + f) * kw + e);
                  const auto xi = static_cast<std::size_t>(((i * d + zz) * h + rr) * wd + cc);
                  gw[wi] += go * x[xi];
                  gx[xi] += go * w[wi];
                }
        }
  for (std::size_t i = 0; i < gx.size(); ++i) ASSERT_NEAR(xv.grad()[i], gx[i], 1e-11);
  for (std::size_t i = 0; i < gw.size(); ++i) ASSERT_NEAR(wv.grad()[i], gw[i], 1e-10);
  for (std::size_t i = 0; i < gb.size(); ++i) ASSERT_NEAR(bv.grad()[i], gb[i], 1e-10);
}

TEST(Conv, ChannelMismatchThrows) {
  Tape tape;
  Var x = tape.constant(Tensor({2, 3, 3}));
  Var w = tape.constant(Tensor({1, 3, 3, 3}));
  Var b = tape.constant(Tensor({1}));
  EXPECT_THROW(conv2d(x, w, b), ShapeError);
}

TEST(Ops, ExpOfZerosIsOnes) {
  Tape tape;
  const Tensor y = exp(tape.constant(Tensor({3}))).value();
  EXPECT_EQ(y.storage(), (std::vector<double>{1, 1, 1}));
}

TEST(Ops, NonFiniteOutputThrows) {
  Tape tape;
  EXPECT_THROW(exp(tape.constant(Tensor({2}, 1000.0))), NumericalError);
}

TEST(Ops, ShapeMismatchThrows) {
  Tape tape;
  EXPECT_THROW(add(tape.constant(Tensor({2})), tape.constant(Tensor({3}))), ShapeError);
  EXPECT_THROW(matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3}))), ShapeError);
}

TEST(Ops, UnknownKindThrows) {
  Tape tape;
  std::vector<Var> in{tape.constant(Tensor({2}))};
  EXPECT_THROW(forward_op("conv4d", in), ConfigError);
}

TEST(Ops, BilinearUpsampleUsesHalfPixelCenters) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 3}, {0.0, 1.0, 2.0}));
  const std::size_t axes[] = {1};
  const Tensor y = upsample_bilinear(x, axes).value();
  const std::vector<double> expect{0.0, 0.25, 0.75, 1.25, 1.75, 2.0};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(y[i], expect[i]);
}

TEST(Ops, FiniteDiffInterval) {
  Tape tape;
  Var x = tape.constant(Tensor({5}, {0, 1, 4, 9, 16}));
  const Tensor y = finite_diff(x, 0, 2).value();
  EXPECT_EQ(y.storage(), (std::vector<double>{4, 8, 12}));
  EXPECT_THROW(finite_diff(x, 0, 5), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Var x = tape.leaf(Tensor({2, 3}, 0.7));
  tape.backward(sum(x));
  for (double g : x.grad().data()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var x = tape.leaf(Tensor({3}, {1, 2, 3}));
  tape.backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad().storage(), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, ReuseAccumulatesAdditively) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1, -1}));
  Var y = add(scale(x, 3.0), x);
  tape.backward(sum(y));
  EXPECT_EQ(x.grad().storage(), (std::vector<double>{4, 4}));
}

TEST(Backward, RootMustBeScalar) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Backward, TapeIsConsumedOnce) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, 1.0));
  Var s = sum(x);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), Error);
  EXPECT_THROW(tape.leaf(Tensor({1})), Error);
}

TEST(Backward, ParameterGradientsAccumulateAcrossTapes) {
  Parameter p(Tensor({2}, {1.0, 2.0}));
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(sumsq(tape.param(p)));
  }
  EXPECT_EQ(p.grad.storage(), (std::vector<double>{4.0, 8.0}));
}

TEST(Backward, Linearity) {
  std::mt19937_64 rng(5);
  const Tensor x0 = random_tensor({3, 4}, rng);
  const double a = 0.7, b = -1.3;
  auto f = [](const Var& x) { return sum(tanh(x)); };
  auto g = [](const Var& x) { return sumsq(exp(scale(x, 0.5))); };
  auto grad_of = [&](auto&& fn) {
    Tape tape;
    Var x = tape.leaf(x0);
    tape.backward(fn(x));
    return x.grad();
  };
  const Tensor gf = grad_of(f), gg = grad_of(g);
  const Tensor gc = grad_of([&](const Var& x) { return add(scale(f(x), a), scale(g(x), b)); });
  for (std::size_t i = 0; i < gc.size(); ++i) EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-12);
}

TEST(Backward, GradientCheckEveryOpKind) {
  const auto reports = gradcheck_all_ops(20, 2024);
  EXPECT_EQ(reports.size(), op_kinds().size());
  for (const auto& r : reports) {
    EXPECT_TRUE(r.passed) << r.kind << " rel error " << r.max_rel_error;
    EXPECT_EQ(r.cases, 20);
  }
}

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [] {
    std::mt19937_64 rng(99);
    const Tensor x = random_tensor({2, 6, 6}, rng);
    const Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tape tape;
    Var xv = tape.leaf(x), wv = tape.leaf(w), bv = tape.leaf(Tensor({3}, 0.1));
    Var y = sumsq(tanh(conv2d(xv, wv, bv)));
    tape.backward(y);
    std::vector<double> out{y.value().item()};
    for (double v : wv.grad().data()) out.push_back(v);
    for (double v : xv.grad().data()) out.push_back(v);
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p(Tensor({3}, {1.0, -2.0, 0.5}));
  Adam opt({&p}, AdamOptions{.learning_rate = 0.01});
  p.grad = Tensor({3}, {0.3, 0.3, 0.3});
  opt.step();
  EXPECT_NEAR(p.value[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.value[1], -2.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.value[2], 0.5 - 0.01, 1e-9);
  EXPECT_EQ(opt.state().step_count, 1);
}

TEST(Adam, ZeroGradientLeavesParametersAndDecaysMoments) {
  Parameter p(Tensor({2}, {1.0, 2.0}));
  Adam opt({&p}, AdamOptions{.learning_rate = 0.1});
  p.grad = Tensor({2}, {1.0, -1.0});
  opt.step();
  const Tensor before = p.value;
  const double m0 = std::abs(opt.state().first_moment[0][0]);
  const double v0 = opt.state().second_moment[0][0];
  p.zero_grad();
  opt.step();
  // With zero gradient the update is driven only by the decaying moments;
  // after a long run of zero gradients parameters stop moving.
  EXPECT_LT(std::abs(opt.state().first_moment[0][0]), m0);
  EXPECT_LT(opt.state().second_moment[0][0], v0);
  for (int i = 0; i < 2000; ++i) opt.step();
  const Tensor settled = p.value;
  opt.step();
  EXPECT_NEAR(p.value[0], settled[0], 1e-12);
  EXPECT_NE(before[0], 0.0);
  EXPECT_EQ(opt.state().step_count, 2003);
}

TEST(Adam, FreshZeroGradientIsANoOp) {
  Parameter p(Tensor({2}, {1.0, 2.0}));
  Adam opt({&p}, AdamOptions{.learning_rate = 0.1});
  p.zero_grad();
  opt.step();
  EXPECT_EQ(p.value.storage(), (std::vector<double>{1.0, 2.0}));
}

TEST(Adam, QuadraticMatchesScalarOracle) {
  // Independent scalar Adam on f(x) = x^2.
  double x = 1.0, m = 0.0, v = 0.0;
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 100; ++t) {
    const double g = 2.0 * x;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
  }

  Parameter p(Tensor({1}, 1.0));
  Adam opt({&p}, AdamOptions{.learning_rate = lr});
  for (int t = 0; t < 100; ++t) {
    opt.zero_grad();
    Tape tape;
    tape.backward(sumsq(tape.param(p)));
    opt.step();
  }
  EXPECT_NEAR(p.value[0], x, 1e-10);
}

TEST(Adam, RejectsNonFiniteAndMismatchedGradients) {
  Parameter p(Tensor({2}, 1.0));
  Adam opt({&p}, AdamOptions{});
  p.grad[0] = std::nan("");
  EXPECT_THROW(opt.step(), NumericalError);
  p.grad = Tensor({3});
  EXPECT_THROW(opt.step(), ShapeError);
}
