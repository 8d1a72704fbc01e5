#include "lumen/blind.hpp"

#include <cmath>
#include <random>

#include "lumen/adam.hpp"
#include "lumen/ops.hpp"
#include "lumen/video.hpp"

namespace lumen {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor to_tensor(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<RowMajor>(t.ptr(), m.rows(), m.cols()) = m;
  return t;
}

double value_or_zero(const Var& v) { return v.valid() ? v.value().item() : 0.0; }

// Wraps one term so a non-finite value names the term.
template <class F>
Var term(const char* name, F build) {
  Var v;
  try {
    v = build();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("blind loss: term '") + name + "' is not finite (" + e.what() + ")");
  }
  if (!std::isfinite(v.value().item())) throw NumericalError(std::string("blind loss: term '") + name + "' is not finite");
  return v;
}

}  // namespace

void BlindConfig::validate(int frames) const {
  if (rank < 1) throw ConfigError("blind: rank must be >= 1");
  if (hid_height < 1 || hid_width < 1) throw ConfigError("blind: hidden dims must be >= 1");
  if (iterations < 0) throw ConfigError("blind: iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("blind: learning rate must be > 0");
  for (double w : {weights.data_l2, weights.temporal_grad, weights.nonneg_t, weights.smooth_t, weights.color_sat,
                   weights.magnitude_q0}) {
    if (!(w >= 0.0)) throw ConfigError("blind: loss weights must be >= 0");
  }
  if (frames < 2) throw ConfigError("blind: needs at least 2 frames");
  if (fd_interval_min < 1 || fd_interval_max < fd_interval_min || fd_interval_min > frames - 1) {
    throw ConfigError("blind: difference interval range must lie within [1, t-1]");
  }
  if (!(q_width_scale > 0.0) || !(l_width_scale > 0.0)) throw ConfigError("blind: width scales must be > 0");
  if (checkpoint_every < 0) throw ConfigError("blind: checkpoint_every must be >= 0");
}

BlindLossTerms BlindLoss::values() const {
  BlindLossTerms v;
  v.data_l2 = value_or_zero(data_l2);
  v.temporal_grad = value_or_zero(temporal_grad);
  v.nonneg_t = value_or_zero(nonneg_t);
  v.smooth_t = value_or_zero(smooth_t);
  v.color_sat = value_or_zero(color_sat);
  v.magnitude_q0 = value_or_zero(magnitude_q0);
  v.total = total.value().item();
  return v;
}

BlindLoss blind_loss(const Var& t, const Var& l, const Tensor& z, const Var& q0, const Tensor& mask, int obs_height,
                     int obs_width, const BlindWeights& weights, int interval) {
  const Shape& ts = t.shape();
  const Shape& ls = l.shape();
  if (ts.size() != 3 || ls.size() != 3 || ts[0] != ls[0] || ts[2] != ls[1]) {
    throw ShapeError("blind loss: expected t (C, P, H) and l (C, H, F), got " + shape_string(ts) + " and " +
                     shape_string(ls));
  }
  const std::size_t channels = ts[0], pixels = ts[1], hidden = ts[2], frames = ls[2];
  if (z.shape() != Shape{channels, pixels, frames}) {
    throw ShapeError("blind loss: z must be (C, P, F) = " + shape_string({channels, pixels, frames}) + ", got " +
                     shape_string(z.shape()));
  }
  if (obs_height < 1 || obs_width < 1 || static_cast<std::size_t>(obs_height) * obs_width != pixels) {
    throw ShapeError("blind loss: observed grid does not match the transport rows");
  }
  if (!mask.empty() && mask.size() != pixels) throw ShapeError("blind loss: mask must be (I, J)");
  if (interval < 1 || static_cast<std::size_t>(interval) >= frames) {
    throw ConfigError("blind loss: difference interval must be in [1, t-1]");
  }

  Tape& tape = t.tape();
  const std::size_t rows = static_cast<std::size_t>(obs_height), cols = static_cast<std::size_t>(obs_width);
  std::vector<double> keep(pixels, 1.0);
  if (!mask.empty()) {
    for (std::size_t p = 0; p < pixels; ++p) keep[p] = mask[p] != 0.0 ? 0.0 : 1.0;
  }

  // Masked rows of T and Z are zeroed, which removes them from every term
  // except the smoothness differences, which get their own pair masks.
  Var tm = t;
  Tensor zm = z;
  if (!mask.empty()) {
    Tensor row_keep({pixels, hidden});
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t h = 0; h < hidden; ++h) row_keep[p * hidden + h] = keep[p];
    tm = mul_trailing(t, tape.constant(std::move(row_keep)));
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t f = 0; f < frames; ++f) zm[(c * pixels + p) * frames + f] *= keep[p];
  }

  std::vector<Var> residuals;
  for (std::size_t c = 0; c < channels; ++c) {
    const Var tc = reshape(narrow(tm, 0, c, 1), {pixels, hidden});
    const Var lc = reshape(narrow(l, 0, c, 1), {hidden, frames});
    residuals.push_back(reshape(matmul(tc, lc), {1, pixels, frames}));
  }
  const Var residual = sub(channels == 1 ? residuals[0] : concat(residuals, 0), tape.constant(std::move(zm)));

  BlindLoss out;
  out.data_l2 = term("data_l2", [&] { return scale(sumsq(residual), weights.data_l2); });
  out.temporal_grad = term("temporal_grad", [&] {
    return scale(l1(finite_diff(residual, 2, static_cast<std::size_t>(interval))), weights.temporal_grad);
  });
  out.total = add(out.data_l2, out.temporal_grad);

  if (weights.nonneg_t > 0.0) {
    out.nonneg_t = term("nonneg_t", [&] { return scale(l2norm(clamp_max(tm, 0.0)), weights.nonneg_t); });
    out.total = add(out.total, out.nonneg_t);
  }
  if (weights.smooth_t > 0.0 && (rows > 1 || cols > 1)) {
    out.smooth_t = term("smooth_t", [&] {
      const Var grid = reshape(tm, {channels, rows, cols, hidden});
      Var acc;
      auto accumulate = [&](std::size_t axis, std::size_t dr, std::size_t dc) {
        Var diff = finite_diff(grid, axis, 1);
        if (!mask.empty()) {
          const std::size_t nr = rows - dr, nc = cols - dc;
          Tensor pair({nr, nc, hidden});
          for (std::size_t r = 0; r < nr; ++r)
            for (std::size_t c = 0; c < nc; ++c) {
              const double both = keep[r * cols + c] * keep[(r + dr) * cols + c + dc];
              for (std::size_t h = 0; h < hidden; ++h) pair[(r * nc + c) * hidden + h] = both;
            }
          diff = mul_trailing(diff, tape.constant(std::move(pair)));
        }
        acc = acc.valid() ? add(acc, l1(diff)) : l1(diff);
      };
      if (rows > 1) accumulate(1, 1, 0);
      if (cols > 1) accumulate(2, 0, 1);
      return scale(acc, weights.smooth_t);
    });
    out.total = add(out.total, out.smooth_t);
  }
  if (weights.color_sat > 0.0 && channels > 1) {
    out.color_sat = term("color_sat", [&] {
      std::vector<Var> slices;
      for (std::size_t c = 0; c < channels; ++c) slices.push_back(narrow(tm, 0, c, 1));
      // Offsets from channel 0 keep the term exactly 0 for equal channels.
      Var spread = sub(slices[1], slices[0]);
      for (std::size_t c = 2; c < channels; ++c) spread = add(spread, sub(slices[c], slices[0]));
      const Var mean = add(slices[0], scale(spread, 1.0 / static_cast<double>(channels)));
      Var acc = l1(sub(slices[0], mean));
      for (std::size_t c = 1; c < channels; ++c) acc = add(acc, l1(sub(slices[c], mean)));
      return scale(acc, weights.color_sat);
    });
    out.total = add(out.total, out.color_sat);
  }
  if (weights.magnitude_q0 > 0.0) {
    out.magnitude_q0 = term("magnitude_q0", [&] { return scale(l1(q0), weights.magnitude_q0); });
    out.total = add(out.total, out.magnitude_q0);
  }
  return out;
}

BlindLossTerms blind_loss_eval(const Tensor& t, const Tensor& l, const Tensor& z, const Tensor& q0, const Tensor& mask,
                               int obs_height, int obs_width, const BlindWeights& weights, int interval) {
  Tape tape;
  BlindLossTerms v = blind_loss(tape.constant(t), tape.constant(l), z, tape.constant(q0), mask, obs_height, obs_width,
                                weights, interval)
                         .values();
  v.interval = interval;
  return v;
}

Matrix assemble_transport(const TruncatedSVD& svd, const Matrix& q, const Vector& mean_image) {
  if (q.rows() != svd.rank() || mean_image.size() != svd.U.rows()) {
    throw ShapeError("assemble_transport: q must be (s x ij) and the mean image must match U's rows");
  }
  return svd.U * svd.sigma.cwiseSqrt().asDiagonal() * q + mean_image * Eigen::RowVectorXd::Ones(q.cols());
}

Var assemble_transport(const TruncatedSVD& svd, const Var& q, const Vector& mean_image) {
  const Shape& qs = q.shape();
  if (qs.size() != 2 || qs[0] != static_cast<std::size_t>(svd.rank()) ||
      mean_image.size() != svd.U.rows()) {
    throw ShapeError("assemble_transport: q must be (s x ij) and the mean image must match U's rows");
  }
  Tape& tape = q.tape();
  const Matrix basis = svd.U * svd.sigma.cwiseSqrt().asDiagonal();
  const Matrix offset = mean_image * Eigen::RowVectorXd::Ones(static_cast<Eigen::Index>(qs[1]));
  return add(matmul(tape.constant(to_tensor(basis)), q), tape.constant(to_tensor(offset)));
}

BlindResult run_blind(const ObservedVideo& obs, const BlindConfig& cfg, const BlindCallbacks& callbacks) {
  const VideoDims vd = video_dims(obs.frames);
  const int channels = vd.channels, frames = vd.frames, rows = vd.height, cols = vd.width;
  const int pixels = rows * cols;
  const int hidden = cfg.hid_height * cfg.hid_width;
  cfg.validate(frames);
  if (!obs.frames.all_finite()) throw ConfigError("blind: observed video has non-finite entries");
  if (!obs.mask.empty() && obs.mask.shape() != Shape{static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)}) {
    throw ShapeError("blind: mask must be (I, J)");
  }
  if (!obs.black_frame.empty() &&
      obs.black_frame.shape() != Shape{static_cast<std::size_t>(channels), static_cast<std::size_t>(rows),
                                       static_cast<std::size_t>(cols)}) {
    throw ShapeError("blind: black frame must be (C, I, J)");
  }
  int unmasked = pixels;
  if (!obs.mask.empty()) {
    for (std::size_t p = 0; p < obs.mask.size(); ++p) unmasked -= obs.mask[p] != 0.0;
  }
  if (cfg.rank > std::min(unmasked, frames)) throw ConfigError("blind: rank exceeds min(unmasked pixels, frames)");

  const std::size_t uc = static_cast<std::size_t>(channels), up = static_cast<std::size_t>(pixels),
                    uh = static_cast<std::size_t>(hidden), uf = static_cast<std::size_t>(frames),
                    us = static_cast<std::size_t>(cfg.rank);

  // Black-subtracted, masked input per channel, its SVD and mean frame.
  BlindResult result;
  Tensor z({uc, up, uf});
  for (int c = 0; c < channels; ++c) {
    Matrix zc = video_channel(obs.frames, c);
    for (int p = 0; p < pixels; ++p) {
      const bool masked = !obs.mask.empty() && obs.mask[static_cast<std::size_t>(p)] != 0.0;
      if (masked) {
        zc.row(p).setZero();
      } else if (!obs.black_frame.empty()) {
        zc.row(p).array() -= obs.black_frame[static_cast<std::size_t>(c * pixels + p)];
      }
    }
    SvdOptions so;
    so.seed = cfg.seed;
    TruncatedSVD svd = truncated_svd(zc, cfg.rank, so);
    // Masked rows of Z are 0, so these rows of U are 0 up to rounding.
    if (!obs.mask.empty()) {
      for (int p = 0; p < pixels; ++p) {
        if (obs.mask[static_cast<std::size_t>(p)] != 0.0) svd.U.row(p).setZero();
      }
    }
    result.svd.push_back(std::move(svd));
    result.mean_image.push_back(zc.rowwise().mean());
    Eigen::Map<RowMajor>(z.ptr() + static_cast<std::size_t>(c) * up * uf, pixels, frames) = zc;
  }

  Network q_net(mixing_weight_spec(cfg.hid_height, cfg.hid_width, cfg.rank, channels, cfg.q_width_scale),
                cfg.seed * 2 + 1);
  Network l_net(hidden_video_spec(frames, cfg.hid_height, cfg.hid_width, channels, cfg.l_width_scale),
                cfg.seed * 2 + 2);
  Tensor scale_init({uc * us});
  for (std::size_t c = 0; c < uc; ++c)
    for (std::size_t k = 0; k < us; ++k) {
      scale_init[c * us + k] =
          cfg.unit_scale_init ? 1.0 : std::sqrt(result.svd[c].sigma(static_cast<Eigen::Index>(k)));
    }
  Parameter scales(std::move(scale_init), "vector_scales");

  std::vector<Parameter*> params = q_net.parameters();
  for (Parameter* p : l_net.parameters()) params.push_back(p);
  params.push_back(&scales);
  AdamOptions opts;
  opts.learning_rate = cfg.learning_rate;
  Adam adam(params, opts);

  std::mt19937_64 interval_rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
  std::uniform_int_distribution<int> pick(cfg.fd_interval_min, std::min(cfg.fd_interval_max, frames - 1));

  // Builds T (C, P, H), L (C, H, F) and Q0 (C, H) on a tape.
  struct Factors {
    Var t, l, q0, l_raw;
  };
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  auto build = [&](Tape& tape, bool training) {
    std::mt19937_64* drop = training ? &dropout_rng : nullptr;
    const Var q_all = channel_scale(q_net.forward(tape, drop), tape.param(scales));
    const Var l_raw = l_net.forward(tape, drop);  // (C, F, i, j)
    std::vector<Var> ts, ls, q0s;
    for (std::size_t c = 0; c < uc; ++c) {
      const Var qc = reshape(narrow(q_all, 0, c * us, us), {us, uh});
      ts.push_back(reshape(assemble_transport(result.svd[c], qc, result.mean_image[c]), {1, up, uh}));
      q0s.push_back(narrow(qc, 0, 0, 1));
      ls.push_back(reshape(transpose(reshape(narrow(l_raw, 0, c, 1), {uf, uh})), {1, uh, uf}));
    }
    Factors f;
    f.t = uc == 1 ? ts[0] : concat(ts, 0);
    f.l = uc == 1 ? ls[0] : concat(ls, 0);
    f.q0 = uc == 1 ? q0s[0] : concat(q0s, 0);
    f.l_raw = l_raw;
    return f;
  };
  auto snapshot = [&](const Factors& f, int iteration) {
    BlindCheckpoint cp;
    cp.iteration = iteration;
    cp.transport = f.t.value().reshaped({uc, static_cast<std::size_t>(rows), static_cast<std::size_t>(cols),
                                         static_cast<std::size_t>(cfg.hid_height),
                                         static_cast<std::size_t>(cfg.hid_width)});
    cp.hidden = f.l_raw.value();
    return cp;
  };

  const Tensor no_mask;
  const Tensor& mask = obs.mask.empty() ? no_mask : obs.mask;
  double initial = 0.0;
  for (int it = 0; it < cfg.iterations; ++it) {
    Tape tape;
    const Factors f = build(tape, true);
    const int interval = pick(interval_rng);
    BlindLoss loss;
    try {
      loss = blind_loss(f.t, f.l, z, f.q0, mask, rows, cols, cfg.weights, interval);
    } catch (const NumericalError& e) {
      throw BlindDiverged(std::string("blind: ") + e.what() + " at iteration " + std::to_string(it), result.trace);
    }
    BlindLossTerms terms = loss.values();
    terms.interval = interval;
    if (it == 0) initial = terms.total;
    result.trace.push_back(terms);
    if (it > 0 && terms.total > 1e6 * initial) {
      throw BlindDiverged("blind: loss " + std::to_string(terms.total) + " exceeds 1e6 x initial " +
                              std::to_string(initial) + " at iteration " + std::to_string(it),
                          result.trace);
    }
    adam.zero_grad();
    tape.backward(loss.total);
    adam.step();
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) {
      result.checkpoints.push_back(it + 1);
      if (callbacks.on_checkpoint) callbacks.on_checkpoint(snapshot(f, it + 1));
    }
    if (callbacks.on_iteration && !callbacks.on_iteration(it, terms)) break;
  }

  Tape tape;
  const BlindCheckpoint final_state = snapshot(build(tape, false), static_cast<int>(result.trace.size()));
  result.transport = final_state.transport;
  result.hidden = final_state.hidden;
  return result;
}

BlindConfig desk_blind_config() {
  BlindConfig cfg;
  cfg.rank = 16;
  cfg.hid_height = 8;
  cfg.hid_width = 8;
  cfg.iterations = 10000;
  cfg.q_width_scale = 1.0;
  cfg.l_width_scale = 0.25;
  return cfg;
}

}  // namespace lumen
