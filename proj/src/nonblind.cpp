#include "lumen/nonblind.hpp"

#include <cmath>
#include <limits>

#include "lumen/errors.hpp"
#include "lumen/linalg.hpp"
#include "lumen/video.hpp"

namespace lumen {

namespace {

Matrix select_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
  return out;
}

}  // namespace

NonblindResult invert_known_transport(const Tensor& transport, const Tensor& observed, const Tensor& black_frame,
                                      double lambda_grad, const Tensor* mask) {
  const TransportDims td = transport_dims(transport);
  const VideoDims vd = video_dims(observed);
  if (vd.channels != td.channels || vd.height != td.obs_height || vd.width != td.obs_width) {
    throw ShapeError("invert: observed video " + shape_string(observed.shape()) + " does not match transport " +
                     shape_string(transport.shape()));
  }
  if (black_frame.shape() != Shape{static_cast<std::size_t>(td.channels), static_cast<std::size_t>(td.obs_height),
                                   static_cast<std::size_t>(td.obs_width)}) {
    throw ShapeError("invert: black frame must be (C, I, J), got " + shape_string(black_frame.shape()));
  }
  const int nobs = td.observed();
  if (mask && mask->size() != static_cast<std::size_t>(nobs)) throw ShapeError("invert: mask must be (I, J)");

  std::vector<int> rows, fit_rows, held_rows;
  for (int p = 0; p < nobs; ++p) {
    if (mask && (*mask)[p] != 0.0) continue;
    rows.push_back(p);
    (p % 4 == 3 ? held_rows : fit_rows).push_back(p);
  }
  if (rows.empty()) throw ShapeError("invert: every observed pixel is masked");

  NonblindResult result;
  std::vector<Matrix> out;
  for (int c = 0; c < td.channels; ++c) {
    const Matrix t_all = transport_channel(transport, c);
    Matrix z_all = video_channel(observed, c);
    for (int p = 0; p < nobs; ++p) z_all.row(p).array() -= black_frame[c * nobs + p];
    const Matrix t = select_rows(t_all, rows);
    const Matrix z = select_rows(z_all, rows);

    double lambda = lambda_grad;
    if (lambda < 0.0) {
      const Matrix d = finite_difference_operator(td.hid_height, td.hid_width);
      const double unit = t.squaredNorm() / d.squaredNorm();
      std::vector<int> frames;
      for (int f = 0; f < vd.frames; f += 4) frames.push_back(f);
      Matrix z_sub(z_all.rows(), static_cast<Eigen::Index>(frames.size()));
      for (std::size_t k = 0; k < frames.size(); ++k) z_sub.col(static_cast<Eigen::Index>(k)) = z_all.col(frames[k]);
      const Matrix t_fit = select_rows(t_all, fit_rows), z_fit = select_rows(z_sub, fit_rows);
      const Matrix t_held = select_rows(t_all, held_rows), z_held = select_rows(z_sub, held_rows);
      double best = std::numeric_limits<double>::infinity();
      for (double rel : kLambdaGrid) {
        const double candidate = rel * unit;
        const Matrix l = ridge_solve(t_fit, z_fit, candidate, td.hid_height, td.hid_width);
        const double score = (t_held * l - z_held).squaredNorm();
        result.grid.push_back({candidate, score});
        if (score < best) {
          best = score;
          lambda = candidate;
        }
      }
    }
    result.lambda_grad.push_back(lambda);
    out.push_back(ridge_solve(t, z, lambda, td.hid_height, td.hid_width).cwiseMax(0.0));
  }
  result.hidden = video_from_channels(out, td.hid_height, td.hid_width);
  return result;
}

}  // namespace lumen
