#include "lumen/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "lumen/baselines.hpp"
#include "lumen/blind.hpp"
#include "lumen/config.hpp"
#include "lumen/dip.hpp"
#include "lumen/errors.hpp"
#include "lumen/gradcheck.hpp"
#include "lumen/io.hpp"
#include "lumen/metrics.hpp"
#include "lumen/nonblind.hpp"
#include "lumen/parallel.hpp"
#include "lumen/scene.hpp"
#include "lumen/video.hpp"

namespace lumen {

namespace {

namespace fs = std::filesystem;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Options shared by every subcommand.
struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool deterministic = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_file, "key = value configuration file")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "override a config entry, section.key=value");
  app->add_option("--seed", c.seed, "random seed; overrides the config and LUMEN_SEED");
  app->add_flag("--force", c.force, "allow overwriting existing outputs");
  app->add_flag("--deterministic", c.deterministic, "run every kernel sequentially");
}

// Config file, then LUMEN_SEED, then --set and --seed.
Config resolve_config(const Common& c, const std::string& seed_key) {
  Config cfg = c.config_file.empty() ? Config{} : Config::load(c.config_file);
  if (const char* env = std::getenv("LUMEN_SEED"); env && *env) cfg.set(seed_key, env);
  for (const std::string& o : c.overrides) cfg.set_override(o);
  if (c.seed) cfg.set(seed_key, std::to_string(*c.seed));
  if (c.deterministic) cfg.set("run.deterministic", "true");
  set_deterministic(cfg.get_bool("run.deterministic", false));
  return cfg;
}

// Append-only output directory.
class RunDir {
 public:
  RunDir(fs::path path, bool force) : path_(std::move(path)), force_(force) {
    if (path_.empty()) throw ConfigError("an output directory is required (-o)");
    fs::create_directories(path_);
  }

  fs::path claim(const std::string& name) const {
    const fs::path p = path_ / name;
    if (fs::exists(p) && !force_) throw IoError(p.string() + " exists; use a new directory or --force");
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p;
  }

  // PNG names carry their value range, so match on the stem.
  fs::path claim_stem(const std::string& stem) const {
    const fs::path dir = (path_ / stem).parent_path();
    const std::string prefix = (path_ / stem).filename().string() + "_range_";
    if (fs::exists(dir)) {
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().filename().string().rfind(prefix, 0) != 0) continue;
        if (!force_) throw IoError(entry.path().string() + " exists; use a new directory or --force");
        fs::remove(entry.path());
      }
    }
    fs::create_directories(dir);
    return path_ / stem;
  }

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  bool force_;
};

void echo_config(const RunDir& dir, const std::string& command, const Config& cfg) {
  std::ofstream out(dir.claim(command + "_config.txt"));
  out << cfg.resolved_text();
  if (!out) throw IoError("cannot write the resolved config");
}

Tensor matrix_tensor(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<RowMajor>(t.ptr(), m.rows(), m.cols()) = m;
  return t;
}

Matrix tensor_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("expected a matrix, got " + shape_string(t.shape()));
  return Eigen::Map<const RowMajor>(t.ptr(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

void write_image(const RunDir& dir, const std::string& stem, const Tensor& image) {
  write_png_normalized(dir.claim_stem(stem), image);
}

// Observed data of a simulated case directory.
struct CaseData {
  ObservedVideo obs;
  std::optional<Tensor> transport_gt, hidden_gt;
};

CaseData load_case(const fs::path& dir) {
  CaseData c;
  c.obs.frames = read_ltv1(dir / "Z.ltv1").tensor();
  if (c.obs.frames.rank() != 4) throw ShapeError("Z.ltv1 must hold a (C, t, I, J) video");
  if (fs::exists(dir / "mask.ltv1")) c.obs.mask = read_ltv1(dir / "mask.ltv1").channel_tensor();
  if (fs::exists(dir / "black.ltv1")) c.obs.black_frame = read_ltv1(dir / "black.ltv1").tensor();
  if (fs::exists(dir / "T_gt.ltv1")) c.transport_gt = read_ltv1(dir / "T_gt.ltv1").tensor();
  if (fs::exists(dir / "L_gt.ltv1")) c.hidden_gt = read_ltv1(dir / "L_gt.ltv1").tensor();
  return c;
}

void report_against(std::ostream& out, const std::string& label, const Tensor& candidate,
                    const std::optional<Tensor>& reference) {
  if (!reference || reference->shape() != candidate.shape()) return;
  const AlignedScore s = aligned_ncc(candidate, *reference);
  out << label << " aligned_ncc " << s.score << " transform " << s.transform.describe() << "\n";
}

// ---------------------------------------------------------------------------

struct SimulateOpts {
  Common common;
  std::string preset = "desk-disks";
  std::optional<int> channels;
  std::string out_dir;
};

int run_simulate(const SimulateOpts& o, std::ostream& out) {
  Config cfg = resolve_config(o.common, "scene.seed");
  if (o.channels) cfg.set("scene.channels", std::to_string(*o.channels));
  const std::string preset = cfg.get_string("scene.preset", o.preset);
  const int channels = cfg.get_int("scene.channels", 1);
  const std::uint64_t seed = cfg.get_u64("scene.seed", 0);
  ScenePreset p = scene_preset(preset, channels);
  p.scene.noise_std = cfg.get_double("scene.noise_std", p.scene.noise_std);
  p.scene.ambient_level = cfg.get_double("scene.ambient_level", p.scene.ambient_level);
  p.scene.saturation = cfg.get_double("scene.saturation", p.scene.saturation);
  p.scene.validate();
  cfg.reject_unknown({"scene", "run"});

  const RunDir dir(o.out_dir, o.common.force);
  const Tensor transport = synth_transport(p.scene, seed);
  const Tensor hidden = synth_hidden_video(p.script, seed);
  const ObservedVideo obs = observe(transport, hidden, p.scene, seed);
  write_ltv1(dir.claim("Z.ltv1"), ltv1_from_tensor(obs.frames));
  write_ltv1(dir.claim("T_gt.ltv1"), ltv1_from_tensor(transport));
  write_ltv1(dir.claim("L_gt.ltv1"), ltv1_from_tensor(hidden));
  write_ltv1(dir.claim("mask.ltv1"), ltv1_single_channel(obs.mask));
  write_ltv1(dir.claim("black.ltv1"), ltv1_from_tensor(obs.black_frame));
  if (channels == 1 || channels == 3) {
    write_image(dir, "Z_sheet", video_sheet(obs.frames, 64));
    write_image(dir, "T_gt_sheet", transport_sheet(transport));
    write_image(dir, "L_gt_sheet", video_sheet(hidden, 64));
  }
  echo_config(dir, "simulate", cfg);
  const VideoDims vd = video_dims(obs.frames);
  out << "simulated " << preset << ": " << vd.channels << " channel(s), " << vd.frames << " frames, " << vd.height
      << "x" << vd.width << " observed, " << p.scene.hid_height << "x" << p.scene.hid_width << " hidden -> "
      << dir.path().string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct CaseOpts {
  Common common;
  std::string case_dir;
  std::string out_dir;
  std::optional<int> iterations;
};

int run_invert(const CaseOpts& o, std::ostream& out) {
  Config cfg = resolve_config(o.common, "nonblind.seed");
  const double lambda = cfg.get_double("nonblind.lambda", -1.0);
  cfg.reject_unknown({"nonblind", "run"});
  const CaseData c = load_case(o.case_dir);
  if (!c.transport_gt) throw IoError("invert needs T_gt.ltv1 in " + o.case_dir);
  const RunDir dir(o.out_dir.empty() ? o.case_dir : o.out_dir, o.common.force);
  const NonblindResult r = invert_known_transport(*c.transport_gt, c.obs.frames, c.obs.black_frame, lambda,
                                                  c.obs.mask.empty() ? nullptr : &c.obs.mask);
  write_ltv1(dir.claim("L_inv.ltv1"), ltv1_from_tensor(r.hidden));
  if (r.hidden.dim(0) == 1 || r.hidden.dim(0) == 3) write_image(dir, "L_inv_sheet", video_sheet(r.hidden, 64));
  echo_config(dir, "invert", cfg);
  for (std::size_t c2 = 0; c2 < r.lambda_grad.size(); ++c2) out << "lambda[" << c2 << "] " << r.lambda_grad[c2] << "\n";
  if (c.hidden_gt && c.hidden_gt->shape() == r.hidden.shape()) out << "psnr " << psnr(r.hidden, *c.hidden_gt) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct MatrixOpts {
  Common common;
  std::string input;
  std::string toy;
  int size = 64;
  std::string method = "nmf";
  std::string case_dir;
  std::string out_dir;
  std::optional<int> iterations;
};

struct MatrixInput {
  Matrix z;
  std::optional<ToyProblem> toy;
};

MatrixInput load_matrix_input(const MatrixOpts& o, std::uint64_t seed) {
  MatrixInput in;
  if (!o.input.empty() == !o.toy.empty()) throw ConfigError("give exactly one of --input and --toy");
  if (!o.input.empty()) {
    in.z = tensor_matrix(read_ltv1(o.input).channel_tensor());
  } else if (o.toy == "curves") {
    in.toy = curves_toy(o.size, seed);
  } else if (o.toy == "rank1") {
    in.toy = rank_one_toy(o.size, seed);
  } else {
    throw ConfigError("unknown toy '" + o.toy + "' (curves, rank1)");
  }
  if (in.toy) in.z = in.toy->z;
  return in;
}

void write_factors(const RunDir& dir, const std::string& prefix, const Matrix& t, const Matrix& l,
                   const MatrixInput& in, std::ostream& out) {
  write_ltv1(dir.claim(prefix + "T.ltv1"), ltv1_single_channel(matrix_tensor(t)));
  write_ltv1(dir.claim(prefix + "L.ltv1"), ltv1_single_channel(matrix_tensor(l)));
  write_image(dir, prefix + "T", matrix_tensor(t));
  write_image(dir, prefix + "L", matrix_tensor(l));
  write_image(dir, prefix + "TL", matrix_tensor(t * l));
  out << "residual " << product_residual(t, l, in.z) << "\n";
  if (in.toy) {
    if (!dir.path().empty() && !fs::exists(dir.path() / "Z.ltv1")) {
      write_ltv1(dir.claim("Z.ltv1"), ltv1_single_channel(matrix_tensor(in.z)));
      write_ltv1(dir.claim("T_gt.ltv1"), ltv1_single_channel(matrix_tensor(in.toy->t)));
      write_ltv1(dir.claim("L_gt.ltv1"), ltv1_single_channel(matrix_tensor(in.toy->l)));
    }
    if (t.cols() == in.toy->t.cols()) {
      out << "T aligned_ncc " << aligned_ncc(matrix_tensor(t), matrix_tensor(in.toy->t)).score << "\n";
      out << "L aligned_ncc " << aligned_ncc(matrix_tensor(l), matrix_tensor(in.toy->l)).score << "\n";
    }
  }
}

int run_factorize(const MatrixOpts& o, std::ostream& out) {
  Config cfg = resolve_config(o.common, "factorize.seed");
  if (o.iterations) cfg.set("factorize.iterations", std::to_string(*o.iterations));
  FactorizationConfig fc;
  fc.inner_dim = cfg.get_int("factorize.inner_dim", 0);
  fc.iterations = cfg.get_int("factorize.iterations", fc.iterations);
  fc.learning_rate = cfg.get_double("factorize.learning_rate", fc.learning_rate);
  fc.width_scale = cfg.get_double("factorize.width_scale", fc.width_scale);
  fc.loss.pointwise_weight = cfg.get_double("factorize.pointwise_weight", fc.loss.pointwise_weight);
  fc.seed = cfg.get_u64("factorize.seed", 0);
  cfg.reject_unknown({"factorize", "run"});
  const MatrixInput in = load_matrix_input(o, fc.seed);
  const RunDir dir(o.out_dir, o.common.force);
  const FactorizationResult r = dip_factorize(in.z, fc);
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < r.loss_trace.size(); ++k) rows.push_back({double(k), r.loss_trace[k]});
  write_tsv(dir.claim("loss.tsv"), {"iteration", "loss"}, rows);
  write_factors(dir, "", r.t, r.l, in, out);
  echo_config(dir, "factorize", cfg);
  return kExitOk;
}

int run_baseline(const MatrixOpts& o, std::ostream& out) {
  Config cfg = resolve_config(o.common, "baseline.seed");
  if (o.iterations) cfg.set("baseline.iterations", std::to_string(*o.iterations));
  const std::string method = cfg.get_string("baseline.method", o.method);
  const std::uint64_t seed = cfg.get_u64("baseline.seed", 0);

  if (method == "levin") {
    LevinConfig lc;
    lc.prior_weight = cfg.get_double("baseline.prior_weight", lc.prior_weight);
    lc.em_rounds = cfg.get_int("baseline.iterations", lc.em_rounds);
    lc.tolerance = cfg.get_double("baseline.tolerance", lc.tolerance);
    lc.seed = seed;
    if (o.case_dir.empty()) throw ConfigError("levin needs a case directory (-c)");
    const CaseData c = load_case(o.case_dir);
    const TransportDims td = c.hidden_gt ? TransportDims{1, 1, 1, int(c.hidden_gt->dim(2)), int(c.hidden_gt->dim(3))}
                                         : TransportDims{1, 1, 1, 8, 8};
    lc.hidden_rows = cfg.get_int("baseline.hid_height", td.hid_height);
    lc.hidden_cols = cfg.get_int("baseline.hid_width", td.hid_width);
    cfg.reject_unknown({"baseline", "run"});
    const VideoDims vd = video_dims(c.obs.frames);
    const RunDir dir(o.out_dir.empty() ? o.case_dir : o.out_dir, o.common.force);
    std::vector<Matrix> hidden;
    for (int ch = 0; ch < vd.channels; ++ch) {
      Matrix z = video_channel(c.obs.frames, ch);
      for (Eigen::Index p = 0; p < z.rows(); ++p) {
        if (!c.obs.mask.empty() && c.obs.mask[static_cast<std::size_t>(p)] != 0.0) {
          z.row(p).setZero();
        } else if (!c.obs.black_frame.empty()) {
          z.row(p).array() -= c.obs.black_frame[static_cast<std::size_t>(ch) * z.rows() + p];
        }
      }
      const LevinResult r = levin_em(z, lc);
      hidden.push_back(r.l);
      out << "channel " << ch << " rounds " << r.rounds << " residual " << r.residual_trace.back() << "\n";
    }
    const Tensor l = video_from_channels(hidden, lc.hidden_rows, lc.hidden_cols);
    write_ltv1(dir.claim("levin_L.ltv1"), ltv1_from_tensor(l));
    if (vd.channels == 1 || vd.channels == 3) write_image(dir, "levin_L_sheet", video_sheet(l, 64));
    echo_config(dir, "baseline", cfg);
    report_against(out, "L", l, c.hidden_gt);
    return kExitOk;
  }

  if (method == "nmf") {
    const int q = cfg.get_int("baseline.inner_dim", 0);
    const int iterations = cfg.get_int("baseline.iterations", 500);
    cfg.reject_unknown({"baseline", "run"});
    const MatrixInput in = load_matrix_input(o, seed);
    const RunDir dir(o.out_dir, o.common.force);
    const NmfResult r =
        nmf_als(in.z, q > 0 ? q : static_cast<int>(std::min(in.z.rows(), in.z.cols())), iterations, seed);
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < r.error_trace.size(); ++k) rows.push_back({double(k), r.error_trace[k]});
    write_tsv(dir.claim("nmf_error.tsv"), {"accepted", "frobenius_error"}, rows);
    write_factors(dir, "nmf_", r.t, r.l, in, out);
    echo_config(dir, "baseline", cfg);
    return kExitOk;
  }

  if (method == "direct") {
    DirectEntryConfig dc;
    dc.inner_dim = cfg.get_int("baseline.inner_dim", 0);
    dc.iterations = cfg.get_int("baseline.iterations", dc.iterations);
    dc.learning_rate = cfg.get_double("baseline.learning_rate", dc.learning_rate);
    dc.smooth_weight = cfg.get_double("baseline.smooth_weight", dc.smooth_weight);
    dc.loss.pointwise_weight = cfg.get_double("baseline.pointwise_weight", dc.loss.pointwise_weight);
    dc.seed = seed;
    cfg.reject_unknown({"baseline", "run"});
    const MatrixInput in = load_matrix_input(o, seed);
    const RunDir dir(o.out_dir, o.common.force);
    const FactorizationResult r = direct_entry_factorize(in.z, dc);
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < r.loss_trace.size(); ++k) rows.push_back({double(k), r.loss_trace[k]});
    write_tsv(dir.claim("direct_loss.tsv"), {"iteration", "loss"}, rows);
    write_factors(dir, "direct_", r.t, r.l, in, out);
    echo_config(dir, "baseline", cfg);
    return kExitOk;
  }
  throw ConfigError("unknown baseline method '" + method + "' (nmf, direct, levin)");
}

// ---------------------------------------------------------------------------

BlindConfig blind_config_from(Config& cfg) {
  BlindConfig b = desk_blind_config();
  b.rank = cfg.get_int("blind.rank", b.rank);
  b.hid_height = cfg.get_int("blind.hid_height", b.hid_height);
  b.hid_width = cfg.get_int("blind.hid_width", b.hid_width);
  b.iterations = cfg.get_int("blind.iterations", b.iterations);
  b.learning_rate = cfg.get_double("blind.learning_rate", b.learning_rate);
  b.weights.data_l2 = cfg.get_double("blind.weight_data_l2", b.weights.data_l2);
  b.weights.temporal_grad = cfg.get_double("blind.weight_temporal_grad", b.weights.temporal_grad);
  b.weights.nonneg_t = cfg.get_double("blind.weight_nonneg_t", b.weights.nonneg_t);
  b.weights.smooth_t = cfg.get_double("blind.weight_smooth_t", b.weights.smooth_t);
  b.weights.color_sat = cfg.get_double("blind.weight_color_sat", b.weights.color_sat);
  b.weights.magnitude_q0 = cfg.get_double("blind.weight_magnitude_q0", b.weights.magnitude_q0);
  b.fd_interval_min = cfg.get_int("blind.fd_interval_min", b.fd_interval_min);
  b.fd_interval_max = cfg.get_int("blind.fd_interval_max", b.fd_interval_max);
  b.q_width_scale = cfg.get_double("blind.q_width_scale", b.q_width_scale);
  b.l_width_scale = cfg.get_double("blind.l_width_scale", b.l_width_scale);
  b.unit_scale_init = cfg.get_bool("blind.unit_scale_init", b.unit_scale_init);
  b.checkpoint_every = cfg.get_int("blind.checkpoint_every", b.checkpoint_every);
  b.seed = cfg.get_u64("blind.seed", b.seed);
  return b;
}

std::vector<double> trace_row(int iteration, const BlindLossTerms& t) {
  return {double(iteration), t.total,    t.data_l2,     t.temporal_grad, t.nonneg_t,
          t.smooth_t,        t.color_sat, t.magnitude_q0, double(t.interval)};
}

const std::vector<std::string> kTraceHeader{"iteration", "total",     "data_l2",      "temporal_grad", "nonneg_t",
                                            "smooth_t",  "color_sat", "magnitude_q0", "interval"};

int run_blind_command(const CaseOpts& o, std::ostream& out) {
  Config cfg = resolve_config(o.common, "blind.seed");
  if (o.iterations) cfg.set("blind.iterations", std::to_string(*o.iterations));
  const BlindConfig bc = blind_config_from(cfg);
  const int log_every = cfg.get_int("blind.log_every", 500);
  cfg.reject_unknown({"blind", "run"});
  if (o.case_dir.empty()) throw ConfigError("blind needs a case directory (-c)");
  const CaseData c = load_case(o.case_dir);
  const RunDir dir(o.out_dir.empty() ? o.case_dir : o.out_dir, o.common.force);
  const fs::path loss_path = dir.claim("loss.tsv");
  echo_config(dir, "blind", cfg);

  BlindCallbacks cb;
  cb.on_iteration = [&](int it, const BlindLossTerms& t) {
    if (log_every > 0 && it % log_every == 0) out << "iteration " << it << " loss " << t.total << "\n" << std::flush;
    return true;
  };
  cb.on_checkpoint = [&](const BlindCheckpoint& cp) {
    char name[64];
    std::snprintf(name, sizeof name, "checkpoints/%07d_", cp.iteration);
    write_ltv1(dir.claim(std::string(name) + "T.ltv1"), ltv1_from_tensor(cp.transport, Ltv1Dtype::f32));
    write_ltv1(dir.claim(std::string(name) + "L.ltv1"), ltv1_from_tensor(cp.hidden, Ltv1Dtype::f32));
  };

  BlindResult r;
  try {
    r = run_blind(c.obs, bc, cb);
  } catch (const BlindDiverged& e) {
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < e.trace().size(); ++k) rows.push_back(trace_row(int(k), e.trace()[k]));
    write_tsv(loss_path, kTraceHeader, rows);
    throw;
  }
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < r.trace.size(); ++k) rows.push_back(trace_row(int(k), r.trace[k]));
  write_tsv(loss_path, kTraceHeader, rows);
  write_ltv1(dir.claim("T.ltv1"), ltv1_from_tensor(r.transport));
  write_ltv1(dir.claim("L.ltv1"), ltv1_from_tensor(r.hidden));
  if (r.hidden.dim(0) == 1 || r.hidden.dim(0) == 3) {
    write_image(dir, "T_sheet", transport_sheet(r.transport));
    write_image(dir, "L_sheet", video_sheet(r.hidden, 64));
  }
  if (!r.trace.empty()) {
    out << "loss initial " << r.trace.front().total << " final " << r.trace.back().total << "\n";
  }
  report_against(out, "L", r.hidden, c.hidden_gt);
  if (c.transport_gt) {
    // Share of the true transport outside span(U) + mean, per channel.
    const TransportDims td = transport_dims(*c.transport_gt);
    for (int ch = 0; ch < td.channels; ++ch) {
      if (static_cast<std::size_t>(ch) >= r.svd.size()) break;
      const Matrix t = transport_channel(*c.transport_gt, ch);
      const Matrix d = t - r.mean_image[ch] * Eigen::RowVectorXd::Ones(t.cols());
      const Matrix& u = r.svd[ch].U;
      out << "channel " << ch << " T_gt span residual " << (d - u * (u.transpose() * d)).norm() / d.norm() << "\n";
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalOpts {
  std::string candidate, reference;
  int radius = 2;
};

int run_eval(const EvalOpts& o, std::ostream& out) {
  const Tensor cand = read_ltv1(o.candidate).tensor();
  const Tensor ref = read_ltv1(o.reference).tensor();
  if (cand.shape() != ref.shape()) {
    throw ShapeError("candidate " + shape_string(cand.shape()) + " and reference " + shape_string(ref.shape()) +
                     " differ in shape");
  }
  const AlignedScore s = aligned_ncc(cand, ref, o.radius);
  out << "aligned_ncc " << s.score << "\n";
  if (s.degenerate) out << "warning: every frame is constant; score set to 0\n";
  out << "transform " << s.transform.describe() << "\n";
  out << "psnr_aligned " << psnr(apply_alignment(cand, s.transform), ref) << "\n";
  out << "psnr_raw " << psnr(cand, ref) << "\n";
  return kExitOk;
}

struct GradcheckOpts {
  int cases = 20;
  std::uint64_t seed = 0;
};

int run_gradcheck(const GradcheckOpts& o, std::ostream& out) {
  bool ok = true;
  for (const GradCheckReport& r : gradcheck_all_ops(o.cases, o.seed)) {
    out << (r.passed ? "PASS " : "FAIL ") << r.kind << " cases " << r.cases << " max_rel_error " << r.max_rel_error
        << "\n";
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Light-transport factorization tools", args.empty() ? "lumen" : args[0]};
  app.require_subcommand(1);

  SimulateOpts sim;
  CLI::App* simulate = app.add_subcommand("simulate", "render a synthetic scene into a case directory");
  add_common(simulate, sim.common);
  simulate->add_option("--preset", sim.preset, "scene preset (desk-disks, nonblind)");
  simulate->add_option("--channels", sim.channels, "1 for grayscale, 3 for colour");
  simulate->add_option("-o,--out", sim.out_dir, "output directory")->required();

  CaseOpts inv;
  CLI::App* invert = app.add_subcommand("invert", "recover the hidden video with the known transport");
  add_common(invert, inv.common);
  invert->add_option("-c,--case", inv.case_dir, "case directory")->required()->check(CLI::ExistingDirectory);
  invert->add_option("-o,--out", inv.out_dir, "output directory (default: the case directory)");

  MatrixOpts fac;
  CLI::App* factorize = app.add_subcommand("factorize", "factor a matrix with two generator networks");
  add_common(factorize, fac.common);
  factorize->add_option("--input", fac.input, "single-channel matrix in LTV1")->check(CLI::ExistingFile);
  factorize->add_option("--toy", fac.toy, "built-in toy problem (curves, rank1)");
  factorize->add_option("--size", fac.size, "toy size");
  factorize->add_option("--iters", fac.iterations, "iterations");
  factorize->add_option("-o,--out", fac.out_dir, "output directory")->required();

  CaseOpts bl;
  CLI::App* blind = app.add_subcommand("blind", "recover transport and hidden video from the observation only");
  add_common(blind, bl.common);
  blind->add_option("-c,--case", bl.case_dir, "case directory")->required()->check(CLI::ExistingDirectory);
  blind->add_option("-o,--out", bl.out_dir, "output directory (default: the case directory)");
  blind->add_option("--iters", bl.iterations, "iterations");

  MatrixOpts base;
  CLI::App* baseline = app.add_subcommand("baseline", "run a reference method (nmf, direct, levin)");
  add_common(baseline, base.common);
  baseline->add_option("--method", base.method, "nmf, direct or levin");
  baseline->add_option("--input", base.input, "single-channel matrix in LTV1")->check(CLI::ExistingFile);
  baseline->add_option("--toy", base.toy, "built-in toy problem (curves, rank1)");
  baseline->add_option("--size", base.size, "toy size");
  baseline->add_option("-c,--case", base.case_dir, "case directory (levin)")->check(CLI::ExistingDirectory);
  baseline->add_option("--iters", base.iterations, "iterations or EM rounds");
  baseline->add_option("-o,--out", base.out_dir, "output directory");

  EvalOpts ev;
  CLI::App* eval = app.add_subcommand("eval", "score a recovered video against a reference");
  eval->add_option("--cand", ev.candidate, "candidate LTV1")->required()->check(CLI::ExistingFile);
  eval->add_option("--ref", ev.reference, "reference LTV1")->required()->check(CLI::ExistingFile);
  eval->add_option("--radius", ev.radius, "shift search radius");

  GradcheckOpts gc;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op");
  gradcheck->add_option("--cases", gc.cases, "random cases per op");
  gradcheck->add_option("--seed", gc.seed, "random seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (simulate->parsed()) return run_simulate(sim, out);
    if (invert->parsed()) return run_invert(inv, out);
    if (factorize->parsed()) return run_factorize(fac, out);
    if (blind->parsed()) return run_blind_command(bl, out);
    if (baseline->parsed()) return run_baseline(base, out);
    if (eval->parsed()) return run_eval(ev, out);
    if (gradcheck->parsed()) return run_gradcheck(gc, out);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  err << "error: no subcommand\n";
  return kExitUsage;
}

int cli_main(int argc, char** argv) {
  return cli_main(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace lumen
