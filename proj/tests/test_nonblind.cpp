#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <random>

#include "lumen/errors.hpp"
#include "lumen/metrics.hpp"
#include "lumen/nonblind.hpp"
#include "lumen/scene.hpp"
#include "lumen/video.hpp"

using namespace lumen;

namespace {

double median3(double a, double b, double c) { return std::max(std::min(a, b), std::min(std::max(a, b), c)); }

double desk_psnr(double noise, std::uint64_t seed) {
  ScenePreset p = scene_preset("nonblind");
  p.scene.noise_std = noise;
  const Tensor t = synth_transport(p.scene, 1);
  const Tensor l = synth_hidden_video(p.script, 1);
  const ObservedVideo z = observe(t, l, p.scene, seed);
  const NonblindResult r = invert_known_transport(t, z.frames, z.black_frame, -1.0, &z.mask);
  return psnr(r.hidden, l);
}

}  // namespace

TEST(Nonblind, OrthonormalTransportIsItsTranspose) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Matrix a(30, 9);
  for (double& v : a.reshaped()) v = g(rng);
  const Matrix q = Eigen::HouseholderQR<Matrix>(a).householderQ() * Matrix::Identity(30, 9);
  Matrix z_m(30, 4);
  for (double& v : z_m.reshaped()) v = std::abs(g(rng));
  // Keep the exact least-squares answer nonnegative so the clamp is inert.
  Matrix l_true = (q.transpose() * z_m).cwiseAbs();
  z_m = q * l_true;
  const Tensor t = transport_from_channels({q}, 5, 6, 3, 3);
  const Tensor z = video_from_channels({z_m}, 5, 6);
  const NonblindResult r = invert_known_transport(t, z, Tensor({1, 5, 6}), 0.0);
  EXPECT_LT((video_channel(r.hidden, 0) - q.transpose() * z_m).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(r.lambda_grad[0], 0.0);
}

TEST(Nonblind, BlackFrameOnlyGivesZero) {
  ScenePreset p = scene_preset("nonblind");
  p.scene.noise_std = 0.0;
  const Tensor t = synth_transport(p.scene, 1);
  const ObservedVideo z = observe(t, Tensor({1, 6, 16, 16}), p.scene, 0);
  const NonblindResult r = invert_known_transport(t, z.frames, z.black_frame, 1e-3);
  for (double v : r.hidden.data()) EXPECT_EQ(v, 0.0);
}

TEST(Nonblind, AutoLambdaPicksFromGrid) {
  ScenePreset p = scene_preset("nonblind");
  const Tensor t = synth_transport(p.scene, 1);
  const Tensor l = synth_hidden_video(p.script, 1);
  const ObservedVideo z = observe(t, l, p.scene, 2);
  const NonblindResult r = invert_known_transport(t, z.frames, z.black_frame, -1.0);
  ASSERT_EQ(r.grid.size(), kLambdaGrid.size());
  bool found = false;
  for (const auto& g : r.grid) found = found || g[0] == r.lambda_grad[0];
  EXPECT_TRUE(found);
  for (double v : r.hidden.data()) EXPECT_GE(v, 0.0);
  EXPECT_GT(psnr(r.hidden, l), 18.0);
}

TEST(Nonblind, PsnrDegradesWithNoise) {
  double last = 1e300;
  for (double noise : {0.001, 0.004, 0.016}) {
    const double m = median3(desk_psnr(noise, 1), desk_psnr(noise, 2), desk_psnr(noise, 3));
    EXPECT_LE(m, last) << noise;
    last = m;
  }
}

TEST(Nonblind, MaskedPixelsAreIgnored) {
  ScenePreset p = scene_preset("nonblind");
  p.scene.noise_std = 0.0;
  const Tensor t = synth_transport(p.scene, 1);
  const Tensor l = synth_hidden_video(p.script, 1);
  const ObservedVideo clean = observe(t, l, p.scene, 0);
  ObservedVideo z = clean;
  Tensor mask({48, 48});
  for (std::size_t k = 0; k < 48; ++k) {
    mask[k] = 1.0;
    for (std::size_t f = 0; f < 64; ++f) z.frames[f * 48 * 48 + k] = 1e6;  // garbage under the mask
  }
  const NonblindResult r = invert_known_transport(t, z.frames, z.black_frame, 1e-4, &mask);
  const NonblindResult ref = invert_known_transport(t, clean.frames, clean.black_frame, 1e-4, &mask);
  EXPECT_EQ(r.hidden.storage(), ref.hidden.storage());
  EXPECT_GT(psnr(r.hidden, l), 18.0);
}

TEST(Nonblind, SingularWithoutPenalty) {
  Matrix a = Matrix::Zero(8, 4);
  a(0, 0) = a(1, 1) = a(2, 2) = 1.0;
  EXPECT_THROW(invert_known_transport(transport_from_channels({a}, 2, 4, 2, 2), Tensor({1, 2, 2, 4}),
                                      Tensor({1, 2, 4}), 0.0),
               NumericalError);
}

TEST(Nonblind, ShapeMismatch) {
  EXPECT_THROW(invert_known_transport(Tensor({1, 2, 4, 2, 2}), Tensor({1, 2, 3, 4}), Tensor({1, 2, 4}), 0.0),
               ShapeError);
}

TEST(Nonblind, LargeGridRunsQuickly) {
  SceneConfig cfg;
  cfg.obs_height = 64;
  cfg.obs_width = 64;
  cfg.hid_height = 32;
  cfg.hid_width = 32;
  cfg.occluders = default_occluders();
  cfg.light_subsamples = 1;
  const Tensor t = synth_transport(cfg, 1);
  const Tensor l = synth_hidden_video(moving_disks_script(64, 32, 32, 1, 2), 0);
  const ObservedVideo z = observe(t, l, cfg, 3);
  const auto start = std::chrono::steady_clock::now();
  const NonblindResult r = invert_known_transport(t, z.frames, z.black_frame, -1.0);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(seconds, 60.0);
  EXPECT_EQ(r.hidden.shape(), (Shape{1, 64, 32, 32}));
}
