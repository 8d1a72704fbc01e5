// Dense ridge reference for the nonblind preset. Solves
//   min ||T l - z||^2 + lambda ||D l||^2
// per frame with a dense Cholesky factorization, clamps negatives, and prints
// the PSNR (peak 1) against the ground-truth hidden video for each relative lambda.
// The value for the frozen lambda, rounded down to 1e-6, is written to the
// file named on the command line (tests/fixtures/nonblind_psnr.txt).

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include <Eigen/Dense>

#include "lumen/scene.hpp"

using namespace lumen;

namespace {

constexpr std::uint64_t kSceneSeed = 1, kHiddenSeed = 1, kNoiseSeed = 0;
constexpr double kFrozenRelativeLambda = 1e-2;

Eigen::MatrixXd gradient_operator(int h, int w) {
  const int n = h * w;
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(h * (w - 1) + (h - 1) * w, n);
  int row = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + 1 < w; ++x, ++row) {
      d(row, y * w + x) = -1.0;
      d(row, y * w + x + 1) = 1.0;
    }
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x < w; ++x, ++row) {
      d(row, y * w + x) = -1.0;
      d(row, (y + 1) * w + x) = 1.0;
    }
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  const ScenePreset p = scene_preset("nonblind");
  const SceneConfig& sc = p.scene;
  const Tensor t = synth_transport(sc, kSceneSeed);
  const Tensor l = synth_hidden_video(p.script, kHiddenSeed);
  const ObservedVideo z = observe(t, l, sc, kNoiseSeed);

  const int obs = sc.obs_height * sc.obs_width, hid = sc.hid_height * sc.hid_width, frames = p.script.frames;
  Eigen::MatrixXd a(obs, hid);
  for (int r = 0; r < obs; ++r)
    for (int c = 0; c < hid; ++c) a(r, c) = t[static_cast<std::size_t>(r) * hid + c];
  Eigen::MatrixXd rhs(obs, frames);
  for (int f = 0; f < frames; ++f)
    for (int r = 0; r < obs; ++r)
      rhs(r, f) = z.frames[static_cast<std::size_t>(f) * obs + r] - z.black_frame[static_cast<std::size_t>(r)];
  for (int r = 0; r < obs; ++r)
    if (z.mask[static_cast<std::size_t>(r)] != 0.0) {
      a.row(r).setZero();
      rhs.row(r).setZero();
    }
  Eigen::MatrixXd truth(hid, frames);
  for (int f = 0; f < frames; ++f)
    for (int c = 0; c < hid; ++c) truth(c, f) = l[static_cast<std::size_t>(f) * hid + c];

  const Eigen::MatrixXd d = gradient_operator(sc.hid_height, sc.hid_width);
  const Eigen::MatrixXd ata = a.transpose() * a, dtd = d.transpose() * d;
  const double ratio = ata.trace() / dtd.trace();

  double frozen = 0.0;
  for (double rel : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    const Eigen::MatrixXd est = (ata + rel * ratio * dtd).llt().solve(a.transpose() * rhs).cwiseMax(0.0);
    const double mse = (est - truth).squaredNorm() / static_cast<double>(truth.size());
    const double value = -10.0 * std::log10(mse);
    std::printf("relative_lambda %.0e psnr %.6f\n", rel, value);
    if (rel == kFrozenRelativeLambda) frozen = value;
  }
  if (argc > 1) {
    std::ofstream out(argv[1]);
    out << "# dense ridge oracle, nonblind preset, scene seed 1, hidden seed 1, noise seed 0\n";
    out << "# relative_lambda " << kFrozenRelativeLambda << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", std::floor(frozen * 1e6) / 1e6);
    out << "psnr_threshold " << buf << "\n";
  }
  return 0;
}
