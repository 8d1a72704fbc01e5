#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lumen/blind.hpp"
#include "lumen/errors.hpp"
#include "lumen/gradcheck.hpp"
#include "lumen/ops.hpp"
#include "lumen/video.hpp"
#include "oracles.hpp"

using namespace lumen;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = u(rng);
  return t;
}

TruncatedSVD random_svd(int m, int s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const Matrix a = Matrix::NullaryExpr(m, s, [&] { return n(rng); });
  TruncatedSVD svd;
  svd.U = Eigen::HouseholderQR<Matrix>(a).householderQ() * Matrix::Identity(m, s);
  svd.sigma = Vector::LinSpaced(s, 4.0, 0.5);
  svd.V = Matrix::Identity(s, s);
  return svd;
}

struct Instance {
  int channels = 3, rows = 3, cols = 4, hidden = 4, frames = 9;
  Tensor t, l, z, q0, mask;
};

Instance random_instance(std::uint64_t seed, bool masked = true) {
  Instance in;
  const std::size_t c = in.channels, p = in.rows * in.cols, h = in.hidden, f = in.frames;
  in.t = random_tensor({c, p, h}, seed, -0.3, 1.0);
  in.l = random_tensor({c, h, f}, seed + 1, 0.0, 1.0);
  in.z = random_tensor({c, p, f}, seed + 2, 0.0, 2.0);
  in.q0 = random_tensor({c, h}, seed + 3);
  in.mask = Tensor({static_cast<std::size_t>(in.rows), static_cast<std::size_t>(in.cols)});
  if (masked) {
    in.mask[1 * in.cols + 2] = 1.0;
    in.mask[2 * in.cols + 0] = 1.0;
  }
  return in;
}

void expect_terms_near(const BlindLossTerms& a, const BlindLossTerms& b, double tol) {
  const double scale = std::max(1.0, std::abs(b.total));
  EXPECT_NEAR(a.data_l2, b.data_l2, tol * scale);
  EXPECT_NEAR(a.temporal_grad, b.temporal_grad, tol * scale);
  EXPECT_NEAR(a.nonneg_t, b.nonneg_t, tol * scale);
  EXPECT_NEAR(a.smooth_t, b.smooth_t, tol * scale);
  EXPECT_NEAR(a.color_sat, b.color_sat, tol * scale);
  EXPECT_NEAR(a.magnitude_q0, b.magnitude_q0, tol * scale);
  EXPECT_NEAR(a.total, b.total, tol * scale);
}

// Small synthetic observation: random nonnegative T and a hidden video.
ObservedVideo small_observation(int channels, const Tensor& hidden_frames, int rows, int cols, std::uint64_t seed) {
  const int frames = static_cast<int>(hidden_frames.dim(1));
  const int hidden = static_cast<int>(hidden_frames.dim(2) * hidden_frames.dim(3));
  std::vector<Matrix> zs;
  for (int c = 0; c < channels; ++c) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(c));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Matrix t = Matrix::NullaryExpr(rows * cols, hidden, [&] { return u(rng); });
    zs.push_back(t * video_channel(hidden_frames, c));
  }
  (void)frames;
  ObservedVideo obs;
  obs.frames = video_from_channels(zs, rows, cols);
  obs.mask = Tensor({static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)});
  obs.black_frame = Tensor({static_cast<std::size_t>(channels), static_cast<std::size_t>(rows),
                            static_cast<std::size_t>(cols)});
  return obs;
}

BlindConfig small_config() {
  BlindConfig cfg;
  cfg.rank = 4;
  cfg.hid_height = 8;
  cfg.hid_width = 8;
  cfg.iterations = 20;
  cfg.learning_rate = 1e-3;
  cfg.l_width_scale = 0.25;
  cfg.q_width_scale = 0.25;
  cfg.checkpoint_every = 5;
  cfg.seed = 3;
  return cfg;
}

Tensor moving_hidden(int channels, int frames) {
  return synth_hidden_video(moving_disks_script(frames, 8, 8, channels, 2), 2);
}

}  // namespace

TEST(AssembleTransport, ZeroWeightsGiveMeanImage) {
  const TruncatedSVD svd = random_svd(10, 3, 1);
  const Vector mean = Vector::LinSpaced(10, 0.1, 1.0);
  const Matrix t = assemble_transport(svd, Matrix::Zero(3, 5), mean);
  for (int p = 0; p < 5; ++p) EXPECT_EQ((t.col(p) - mean).cwiseAbs().maxCoeff(), 0.0);
}

TEST(AssembleTransport, OneHotSelectsScaledSingularVector) {
  const TruncatedSVD svd = random_svd(10, 3, 2);
  const Vector mean = Vector::LinSpaced(10, 0.1, 1.0);
  Matrix q = Matrix::Zero(3, 4);
  q(1, 2) = 1.0;
  const Matrix t = assemble_transport(svd, q, mean);
  const Vector expected = std::sqrt(svd.sigma(1)) * svd.U.col(1) + mean;
  EXPECT_LE((t.col(2) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(AssembleTransport, RandomMatchesDenseProductAndVarForm) {
  const TruncatedSVD svd = random_svd(12, 4, 3);
  const Vector mean = Vector::LinSpaced(12, 0.0, 2.0);
  const Tensor qt = random_tensor({4, 6}, 4);
  Matrix q(4, 6);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 6; ++b) q(a, b) = qt[static_cast<std::size_t>(a * 6 + b)];
  Matrix dense(12, 6);
  for (int p = 0; p < 12; ++p)
    for (int h = 0; h < 6; ++h) {
      double acc = mean(p);
      for (int k = 0; k < 4; ++k) acc += svd.U(p, k) * std::sqrt(svd.sigma(k)) * q(k, h);
      dense(p, h) = acc;
    }
  EXPECT_LE((assemble_transport(svd, q, mean) - dense).cwiseAbs().maxCoeff(), 1e-12);

  Tape tape;
  const Tensor tv = assemble_transport(svd, tape.constant(qt), mean).value();
  for (int p = 0; p < 12; ++p)
    for (int h = 0; h < 6; ++h) EXPECT_NEAR(tv[static_cast<std::size_t>(p * 6 + h)], dense(p, h), 1e-12);
}

TEST(AssembleTransport, RejectsMismatchedShapes) {
  const TruncatedSVD svd = random_svd(10, 3, 1);
  EXPECT_THROW(assemble_transport(svd, Matrix::Zero(2, 5), Vector::Zero(10)), ShapeError);
  EXPECT_THROW(assemble_transport(svd, Matrix::Zero(3, 5), Vector::Zero(9)), ShapeError);
}

TEST(BlindLoss, ZeroInputsGiveZero) {
  Instance in = random_instance(1, false);
  in.t.fill(0.0);
  in.l.fill(0.0);
  in.z.fill(0.0);
  in.q0.fill(0.0);
  const BlindLossTerms v =
      blind_loss_eval(in.t, in.l, in.z, in.q0, in.mask, in.rows, in.cols, BlindWeights{}, 1);
  EXPECT_EQ(v.total, 0.0);
}

TEST(BlindLoss, EqualChannelsHaveNoColorTerm) {
  Instance in = random_instance(2);
  const std::size_t slice = in.t.size() / 3;
  for (std::size_t k = 0; k < slice; ++k) in.t[slice + k] = in.t[2 * slice + k] = in.t[k];
  const BlindLossTerms v = blind_loss_eval(in.t, in.l, in.z, in.q0, in.mask, in.rows, in.cols, BlindWeights{}, 2);
  EXPECT_EQ(v.color_sat, 0.0);
}

TEST(BlindLoss, MatchesLoopOracle) {
  for (std::uint64_t seed : {10u, 20u, 30u}) {
    const Instance in = random_instance(seed);
    for (int interval : {1, 3, 8}) {
      const BlindLossTerms v =
          blind_loss_eval(in.t, in.l, in.z, in.q0, in.mask, in.rows, in.cols, BlindWeights{}, interval);
      expect_terms_near(v,
                        oracle::blind_loss(in.t, in.l, in.z, in.q0, in.mask, in.rows, in.cols, BlindWeights{}, interval),
                        1e-10);
    }
  }
}

TEST(BlindLoss, MatchesLoopOracleWithoutMaskAndForOneChannel) {
  const Instance in = random_instance(40, false);
  BlindWeights w;
  w.smooth_t = 0.5;
  w.color_sat = 0.25;
  const Tensor none;
  expect_terms_near(blind_loss_eval(in.t, in.l, in.z, in.q0, none, in.rows, in.cols, w, 2),
                    oracle::blind_loss(in.t, in.l, in.z, in.q0, none, in.rows, in.cols, w, 2), 1e-10);

  const std::size_t p = in.rows * in.cols;
  const Tensor t1 = in.t.reshaped({3 * p * in.hidden}), l1v = in.l.reshaped({3u * in.hidden * in.frames});
  Tensor t({1, p, static_cast<std::size_t>(in.hidden)}), l({1, static_cast<std::size_t>(in.hidden),
                                                            static_cast<std::size_t>(in.frames)}),
      z({1, p, static_cast<std::size_t>(in.frames)});
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = t1[k];
  for (std::size_t k = 0; k < l.size(); ++k) l[k] = l1v[k];
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = in.z[k];
  const BlindLossTerms v = blind_loss_eval(t, l, z, in.q0, in.mask, in.rows, in.cols, w, 4);
  EXPECT_EQ(v.color_sat, 0.0);
  expect_terms_near(v, oracle::blind_loss(t, l, z, in.q0, in.mask, in.rows, in.cols, w, 4), 1e-10);
}

TEST(BlindLoss, PriorsOffLeavesDataTerms) {
  const Instance in = random_instance(50);
  BlindWeights w;
  w.nonneg_t = w.smooth_t = w.color_sat = w.magnitude_q0 = 0.0;
  const BlindLossTerms v = blind_loss_eval(in.t, in.l, in.z, in.q0, in.mask, in.rows, in.cols, w, 5);
  const BlindLossTerms o = oracle::blind_loss(in.t, in.l, in.z, in.q0, in.mask, in.rows, in.cols, BlindWeights{}, 5);
  EXPECT_NEAR(v.total, o.data_l2 + o.temporal_grad, 1e-10 * std::max(1.0, o.total));
  EXPECT_EQ(v.nonneg_t + v.smooth_t + v.color_sat + v.magnitude_q0, 0.0);
}

TEST(BlindLoss, GradientMatchesFiniteDifferences) {
  // Inputs are kept away from the kinks of |.| and min(., 0).
  Instance in = random_instance(60);
  in.t = random_tensor(in.t.shape(), 61, 0.2, 1.0);
  for (std::size_t k = 0; k < in.t.size(); k += 7) in.t[k] = -0.5;
  const ScalarFn f = [&](Tape&, std::span<const Var> x) {
    return blind_loss(x[0], x[1], in.z, x[2], in.mask, in.rows, in.cols, BlindWeights{}, 2).total;
  };
  EXPECT_LE(gradient_rel_error(f, {in.t, in.l, in.q0}), 1e-5);
}

TEST(BlindLoss, MaskedPixelsHaveNoInfluence) {
  const Instance in = random_instance(70);
  Instance garbage = in;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < garbage.mask.size(); ++p) {
      if (garbage.mask[p] == 0.0) continue;
      for (int f = 0; f < in.frames; ++f) garbage.z[(c * garbage.mask.size() + p) * in.frames + f] = 1e3 * (f + 1);
      for (int h = 0; h < in.hidden; ++h) garbage.t[(c * garbage.mask.size() + p) * in.hidden + h] = -7.0 * (h + 1);
    }
  auto grads = [](const Instance& x, double& total) {
    Tape tape;
    const Var t = tape.leaf(x.t), l = tape.leaf(x.l), q0 = tape.leaf(x.q0);
    const Var loss = blind_loss(t, l, x.z, q0, x.mask, x.rows, x.cols, BlindWeights{}, 3).total;
    total = loss.value().item();
    tape.backward(loss);
    return std::make_pair(t.grad(), l.grad());
  };
  double a = 0.0, b = 0.0;
  const auto ga = grads(in, a), gb = grads(garbage, b);
  EXPECT_EQ(a, b);
  for (std::size_t k = 0; k < ga.second.size(); ++k) EXPECT_EQ(ga.second[k], gb.second[k]);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < in.mask.size(); ++p)
      for (int h = 0; h < in.hidden; ++h) {
        const std::size_t k = (c * in.mask.size() + p) * in.hidden + h;
        if (in.mask[p] != 0.0) {
          EXPECT_EQ(gb.first[k], 0.0);
        } else {
          EXPECT_EQ(ga.first[k], gb.first[k]);
        }
      }
}

TEST(BlindLoss, RejectsBadInputs) {
  const Instance in = random_instance(80);
  EXPECT_THROW(blind_loss_eval(in.t, in.l, in.z, in.q0, in.mask, in.rows, in.cols, BlindWeights{}, 0), ConfigError);
  EXPECT_THROW(blind_loss_eval(in.t, in.l, in.z, in.q0, in.mask, in.rows, in.cols, BlindWeights{}, in.frames),
               ConfigError);
  EXPECT_THROW(blind_loss_eval(in.t, in.l, in.z, in.q0, in.mask, in.cols, in.rows + 1, BlindWeights{}, 1),
               ShapeError);
  Tensor huge = in.t;
  huge[0] = 1e200;
  try {
    blind_loss_eval(huge, in.l, in.z, in.q0, in.mask, in.rows, in.cols, BlindWeights{}, 1);
    FAIL() << "expected a non-finite term";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("data_l2"), std::string::npos) << e.what();
  }
}

TEST(BlindConfigTest, ValidatesRanges) {
  BlindConfig cfg;
  EXPECT_NO_THROW(cfg.validate(200));
  EXPECT_THROW(cfg.validate(1), ConfigError);
  cfg.weights.smooth_t = -1.0;
  EXPECT_THROW(cfg.validate(200), ConfigError);
  cfg = BlindConfig{};
  cfg.fd_interval_min = 3;
  cfg.fd_interval_max = 2;
  EXPECT_THROW(cfg.validate(200), ConfigError);
  cfg = BlindConfig{};
  cfg.fd_interval_min = 5;
  EXPECT_THROW(cfg.validate(5), ConfigError);
}

TEST(ColorGenerator, ChannelsShareFeatures) {
  const NetworkSpec spec = hidden_video_spec(16, 8, 8, 3, 0.25);
  Network net(spec, 5);
  Tape a;
  const Tensor before = net.forward(a).value();
  net.seed_tensor().value[0] += 0.5;
  Tape b;
  const Tensor after = net.forward(b).value();
  const std::size_t slice = before.size() / 3;
  for (std::size_t c = 0; c < 3; ++c) {
    double change = 0.0;
    for (std::size_t k = 0; k < slice; ++k) change = std::max(change, std::abs(after[c * slice + k] - before[c * slice + k]));
    EXPECT_GT(change, 0.0) << "channel " << c;
  }
}

TEST(RunBlind, ShapesTraceAndCheckpoints) {
  const ObservedVideo obs = small_observation(3, moving_hidden(3, 16), 6, 8, 1);
  const BlindConfig cfg = small_config();
  std::vector<int> seen;
  BlindCallbacks cb;
  cb.on_checkpoint = [&](const BlindCheckpoint& cp) {
    seen.push_back(cp.iteration);
    EXPECT_EQ(cp.transport.shape(), (Shape{3, 6, 8, 8, 8}));
    EXPECT_EQ(cp.hidden.shape(), (Shape{3, 16, 8, 8}));
  };
  const BlindResult r = run_blind(obs, cfg, cb);
  EXPECT_EQ(r.transport.shape(), (Shape{3, 6, 8, 8, 8}));
  EXPECT_EQ(r.hidden.shape(), (Shape{3, 16, 8, 8}));
  EXPECT_EQ(r.trace.size(), 20u);
  EXPECT_EQ(seen, (std::vector<int>{5, 10, 15, 20}));
  EXPECT_EQ(r.checkpoints, seen);
  for (const BlindLossTerms& t : r.trace) {
    EXPECT_TRUE(std::isfinite(t.total));
    EXPECT_GE(t.interval, 1);
    EXPECT_LE(t.interval, 8);
  }
  EXPECT_LT(r.trace.back().total, r.trace.front().total);
  // The hidden-video head is positive.
  for (std::size_t k = 0; k < r.hidden.size(); ++k) ASSERT_GT(r.hidden[k], 0.0);
}

TEST(RunBlind, TransportColumnsLieInSvdSpan) {
  const ObservedVideo obs = small_observation(1, moving_hidden(1, 16), 6, 8, 2);
  const BlindResult r = run_blind(obs, small_config());
  const Matrix& u = r.svd[0].U;
  const Eigen::Index rows = u.rows();
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> t(
      r.transport.ptr(), rows, 64);
  double worst = 0.0;
  for (int h = 0; h < 64; ++h) {
    const Vector d = t.col(h) - r.mean_image[0];
    worst = std::max(worst, (d - u * (u.transpose() * d)).norm() / std::max(d.norm(), 1e-300));
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(RunBlind, MaskedPixelsStayZeroAndDoNotAffectTraining) {
  ObservedVideo obs = small_observation(1, moving_hidden(1, 16), 6, 8, 3);
  obs.mask[9] = 1.0;
  obs.mask[30] = 1.0;
  ObservedVideo garbage = obs;
  for (std::size_t f = 0; f < 16; ++f) {
    garbage.frames[f * 48 + 9] = 1e4;
    garbage.frames[f * 48 + 30] = -3.0 * static_cast<double>(f);
  }
  BlindConfig cfg = small_config();
  cfg.iterations = 5;
  const BlindResult a = run_blind(obs, cfg), b = run_blind(garbage, cfg);
  for (std::size_t k = 0; k < a.transport.size(); ++k) ASSERT_EQ(a.transport[k], b.transport[k]);
  for (std::size_t k = 0; k < a.hidden.size(); ++k) ASSERT_EQ(a.hidden[k], b.hidden[k]);
  for (int h = 0; h < 64; ++h) {
    EXPECT_EQ(a.transport[9 * 64 + h], 0.0);
    EXPECT_EQ(a.transport[30 * 64 + h], 0.0);
  }
}

TEST(RunBlind, CallbackStopsEarlyAndSeedIsReproducible) {
  const ObservedVideo obs = small_observation(1, moving_hidden(1, 16), 6, 8, 4);
  BlindConfig cfg = small_config();
  BlindCallbacks cb;
  cb.on_iteration = [](int it, const BlindLossTerms&) { return it < 6; };
  const BlindResult a = run_blind(obs, cfg, cb), b = run_blind(obs, cfg, cb);
  ASSERT_EQ(a.trace.size(), 7u);
  for (std::size_t k = 0; k < a.trace.size(); ++k) EXPECT_EQ(a.trace[k].total, b.trace[k].total);
}

TEST(RunBlind, RejectsBadInputs) {
  ObservedVideo obs = small_observation(1, moving_hidden(1, 16), 6, 8, 5);
  BlindConfig cfg = small_config();
  cfg.rank = 17;
  EXPECT_THROW(run_blind(obs, cfg), ConfigError);
  cfg = small_config();
  obs.frames[3] = std::nan("");
  EXPECT_THROW(run_blind(obs, cfg), ConfigError);
}
