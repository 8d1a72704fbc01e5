#include "lumen/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "lumen/errors.hpp"
#include "lumen/parallel.hpp"
#include "lumen/video.hpp"

namespace lumen {

namespace {

struct Vec3 {
  double x, y, z;
};

bool inside_footprint(const Occluder& o, double x, double y) {
  if (o.kind == Occluder::Kind::box) return std::abs(x - o.x) <= o.half_x && std::abs(y - o.y) <= o.half_y;
  const double dx = x - o.x, dy = y - o.y;
  return dx * dx + dy * dy <= o.half_x * o.half_x;
}

// Clips [lo, hi] to the parameters where a + t*d lies in [bmin, bmax].
bool clip_slab(double a, double d, double bmin, double bmax, double& lo, double& hi) {
  if (std::abs(d) < 1e-15) return a >= bmin && a <= bmax;
  double t0 = (bmin - a) / d, t1 = (bmax - a) / d;
  if (t0 > t1) std::swap(t0, t1);
  lo = std::max(lo, t0);
  hi = std::min(hi, t1);
  return lo <= hi;
}

// True when the open segment from p to q passes through the occluder.
bool blocks(const Occluder& o, const Vec3& p, const Vec3& q) {
  const Vec3 d{q.x - p.x, q.y - p.y, q.z - p.z};
  constexpr double eps = 1e-9;
  double lo = eps, hi = 1.0 - eps;
  if (!clip_slab(p.z, d.z, 0.0, o.height, lo, hi)) return false;
  if (o.kind == Occluder::Kind::box) {
    return clip_slab(p.x, d.x, o.x - o.half_x, o.x + o.half_x, lo, hi) &&
           clip_slab(p.y, d.y, o.y - o.half_y, o.y + o.half_y, lo, hi);
  }
  // Circle in the xy plane: |(p - c) + t d|^2 <= r^2.
  const double ex = p.x - o.x, ey = p.y - o.y;
  const double a = d.x * d.x + d.y * d.y;
  const double b = 2.0 * (ex * d.x + ey * d.y);
  const double c = ex * ex + ey * ey - o.half_x * o.half_x;
  if (a < 1e-15) return c <= 0.0;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  lo = std::max(lo, (-b - sq) / (2.0 * a));
  hi = std::min(hi, (-b + sq) / (2.0 * a));
  return lo <= hi;
}

struct SurfacePoint {
  Vec3 pos;
  Rgb albedo;
};

SurfacePoint floor_point(const SceneConfig& cfg, int r, int c) {
  SurfacePoint s;
  // Row 0 is the far edge of the floor.
  const double y = cfg.floor_y_far - (r + 0.5) / cfg.obs_height * (cfg.floor_y_far - cfg.floor_y_near);
  const double x = -cfg.floor_x_half + (c + 0.5) / cfg.obs_width * 2.0 * cfg.floor_x_half;
  s.pos = {x, y, 0.0};
  s.albedo = cfg.floor_albedo;
  for (const Occluder& o : cfg.occluders) {
    if (inside_footprint(o, x, y) && o.height > s.pos.z) {
      s.pos.z = o.height;
      s.albedo = o.albedo;
    }
  }
  return s;
}

double disk_coverage(double px, double py, double cx, double cy, double radius) {
  constexpr int n = 4;
  int hits = 0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      const double x = px + (b + 0.5) / n - 0.5 - cx, y = py + (a + 0.5) / n - 0.5 - cy;
      hits += x * x + y * y <= radius * radius;
    }
  return static_cast<double>(hits) / (n * n);
}

}  // namespace

void SceneConfig::validate() const {
  if (obs_height < 1 || obs_width < 1 || hid_height < 1 || hid_width < 1) {
    throw ConfigError("scene: all dimensions must be positive");
  }
  if (channels != 1 && channels != 3) throw ConfigError("scene: channels must be 1 or 3");
  if (ambient_level < 0.0 || noise_std < 0.0 || saturation <= 0.0) {
    throw ConfigError("scene: ambient_level and noise_std must be >= 0, saturation > 0");
  }
  if (light_subsamples < 1) throw ConfigError("scene: light_subsamples must be >= 1");
  auto check_albedo = [](const Rgb& a) {
    for (double v : a) {
      if (v < 0.0 || v > 1.0) throw ConfigError("scene: albedo outside [0, 1]");
    }
  };
  check_albedo(floor_albedo);
  for (const Occluder& o : occluders) {
    check_albedo(o.albedo);
    if (o.half_x <= 0.0 || o.half_y <= 0.0 || o.height <= 0.0) throw ConfigError("scene: degenerate occluder");
  }
}

std::vector<Occluder> default_occluders() {
  // A loose pile of clutter; enough shadow structure to keep T well conditioned.
  return {
      {Occluder::Kind::cylinder, 0.60, 1.24, 0.11, 0.11, 0.17, {0.43, 0.36, 0.31}},
      {Occluder::Kind::cylinder, 0.26, 1.46, 0.10, 0.10, 0.20, {0.34, 0.90, 0.64}},
      {Occluder::Kind::box, -0.20, 0.37, 0.05, 0.08, 0.32, {0.77, 0.50, 0.58}},
      {Occluder::Kind::box, -0.23, 0.51, 0.07, 0.07, 0.59, {0.50, 0.53, 0.65}},
      {Occluder::Kind::cylinder, 0.05, 1.24, 0.12, 0.12, 0.48, {0.81, 0.73, 0.54}},
      {Occluder::Kind::box, 0.50, 0.50, 0.10, 0.04, 0.18, {0.73, 0.35, 0.53}},
      {Occluder::Kind::box, -0.76, 0.92, 0.05, 0.08, 0.51, {0.70, 0.73, 0.52}},
      {Occluder::Kind::box, -0.26, 0.54, 0.12, 0.05, 0.11, {0.81, 0.54, 0.77}},
      {Occluder::Kind::cylinder, -0.61, 1.16, 0.05, 0.05, 0.57, {0.46, 0.87, 0.45}},
      {Occluder::Kind::cylinder, 0.10, 1.11, 0.07, 0.07, 0.58, {0.49, 0.75, 0.72}},
  };
}

Tensor synth_transport(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int nobs = cfg.obs_height * cfg.obs_width, nhid = cfg.hid_height * cfg.hid_width;
  const int k = cfg.light_subsamples;
  const double cell_w = 2.0 * cfg.screen_x_half / cfg.hid_width;
  const double cell_h = (cfg.screen_z_high - cfg.screen_z_low) / cfg.hid_height;

  // Jittered light samples, fixed per seed.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  std::vector<Vec3> samples(static_cast<std::size_t>(nhid) * k * k);
  for (int a = 0; a < cfg.hid_height; ++a)
    for (int b = 0; b < cfg.hid_width; ++b)
      for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
          const double fx = (v + jitter(rng)) / k, fz = (u + jitter(rng)) / k;
          samples[((a * cfg.hid_width + b) * k + u) * k + v] = {
              -cfg.screen_x_half + (b + fx) * cell_w, 0.0, cfg.screen_z_high - (a + fz) * cell_h};
        }

  std::vector<SurfacePoint> points(nobs);
  for (int r = 0; r < cfg.obs_height; ++r)
    for (int c = 0; c < cfg.obs_width; ++c) points[r * cfg.obs_width + c] = floor_point(cfg, r, c);

  // Geometric factor per (observed, hidden) pair, shared across channels.
  Matrix g = Matrix::Zero(nobs, nhid);
  const double sample_area = cell_w * cell_h / (k * k);
  parallel_for(static_cast<std::size_t>(nobs), [&](std::size_t begin, std::size_t end) {
    for (std::size_t o = begin; o < end; ++o) {
      const Vec3 x = points[o].pos;
      for (int p = 0; p < nhid; ++p) {
        double acc = 0.0;
        for (int s = 0; s < k * k; ++s) {
          const Vec3& l = samples[static_cast<std::size_t>(p) * k * k + s];
          const double dx = x.x - l.x, dy = x.y - l.y, dz = l.z - x.z;
          const double r2 = dx * dx + dy * dy + dz * dz;
          if (dy <= 0.0 || dz <= 0.0) continue;
          bool visible = true;
          for (const Occluder& oc : cfg.occluders) {
            if (blocks(oc, l, x)) {
              visible = false;
              break;
            }
          }
          if (visible) acc += dy * dz / (r2 * r2);  // cos * cos / r^2
        }
        g(static_cast<Eigen::Index>(o), p) = acc * sample_area;
      }
    }
  });

  std::vector<Matrix> channels;
  for (int c = 0; c < cfg.channels; ++c) {
    Vector albedo(nobs);
    for (int o = 0; o < nobs; ++o) albedo(o) = points[o].albedo[c];
    channels.push_back(albedo.asDiagonal() * g);
  }
  double peak = 0.0;
  for (const Matrix& m : channels) peak = std::max(peak, m.rowwise().sum().maxCoeff());
  if (peak <= 0.0) throw NumericalError("synth_transport: no light reaches the floor");
  for (Matrix& m : channels) m /= peak;
  return transport_from_channels(channels, cfg.obs_height, cfg.obs_width, cfg.hid_height, cfg.hid_width);
}

Tensor ambient_image(const SceneConfig& cfg) {
  cfg.validate();
  Tensor out({static_cast<std::size_t>(cfg.channels), static_cast<std::size_t>(cfg.obs_height),
              static_cast<std::size_t>(cfg.obs_width)});
  const std::size_t n = static_cast<std::size_t>(cfg.obs_height) * cfg.obs_width;
  for (int r = 0; r < cfg.obs_height; ++r)
    for (int c = 0; c < cfg.obs_width; ++c) {
      const SurfacePoint s = floor_point(cfg, r, c);
      for (int ch = 0; ch < cfg.channels; ++ch) out[ch * n + r * cfg.obs_width + c] = cfg.ambient_level * s.albedo[ch];
    }
  return out;
}

std::array<double, 2> Entity::position(int frame) const {
  return {cx + ax * std::cos(wx * frame + phase_x), cy + ay * std::sin(wy * frame + phase_y)};
}

void HiddenVideoScript::validate() const {
  if (frames < 1 || height < 1 || width < 1) throw ConfigError("script: dimensions must be positive");
  if (channels != 1 && channels != 3) throw ConfigError("script: channels must be 1 or 3");
  if (background < 0.0 || background > 1.0) throw ConfigError("script: background outside [0, 1]");
  for (const Entity& e : entities) {
    if (e.radius <= 0.0) throw ConfigError("script: entity radius must be positive");
    for (double v : e.color) {
      if (v < 0.0 || v > 1.0) throw ConfigError("script: entity color outside [0, 1]");
    }
    const double speed = std::hypot(e.ax * e.wx, e.ay * e.wy);
    if (kind != Kind::constant && speed > 1.0) {
      throw ConfigError("script: entity moves more than one pixel per frame");
    }
  }
}

HiddenVideoScript moving_disks_script(int frames, int height, int width, int channels, std::uint64_t seed) {
  HiddenVideoScript s;
  s.kind = HiddenVideoScript::Kind::moving_disks;
  s.frames = frames;
  s.height = height;
  s.width = width;
  s.channels = channels;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
  const double side = std::min(height, width);
  const double radius = std::max(1.0, 0.14 * side);
  const Rgb colors[3] = {Rgb{1.0, 0.35, 0.3}, Rgb{0.3, 1.0, 0.4}, Rgb{0.4, 0.45, 1.0}};
  const double lum[3] = {1.0, 0.8, 0.65};
  // Period of a few hundred frames regardless of size; speed stays below 1 px/frame.
  const double amp_x[3] = {0.28 * (width - 1), 0.22 * (width - 1), 0.12 * (width - 1)};
  const double amp_y[3] = {0.28 * (height - 1), 0.14 * (height - 1), 0.25 * (height - 1)};
  const double omega[3] = {2.0 * std::numbers::pi / 120.0, -2.0 * std::numbers::pi / 90.0,
                           2.0 * std::numbers::pi / 150.0};
  for (int k = 0; k < 3; ++k) {
    Entity e;
    e.radius = radius;
    e.cx = 0.5 * (width - 1);
    e.cy = 0.5 * (height - 1);
    e.ax = amp_x[k];
    e.ay = amp_y[k];
    e.wx = omega[k];
    e.wy = k == 2 ? 2.0 * omega[k] : omega[k];
    e.phase_x = u(rng);
    e.phase_y = k == 2 ? u(rng) : e.phase_x;
    e.color = channels == 3 ? colors[k] : Rgb{lum[k], lum[k], lum[k]};
    s.entities.push_back(e);
  }
  s.validate();
  return s;
}

HiddenVideoScript two_blobs_script(int frames, int height, int width, int channels) {
  HiddenVideoScript s;
  s.kind = HiddenVideoScript::Kind::two_blobs_waving;
  s.frames = frames;
  s.height = height;
  s.width = width;
  s.channels = channels;
  for (int k = 0; k < 2; ++k) {
    Entity e;
    e.profile = Entity::Profile::gaussian;
    e.radius = 0.12 * std::min(height, width) + 0.5;
    e.cx = (k == 0 ? 0.3 : 0.7) * (width - 1);
    e.cy = 0.5 * (height - 1);
    e.ax = 0.05 * width;
    e.ay = 0.3 * (height - 1);
    e.wx = 2.0 * std::numbers::pi / 60.0;
    e.wy = 2.0 * std::numbers::pi / (k == 0 ? 40.0 : 55.0);
    e.phase_y = k * std::numbers::pi / 2.0;
    e.color = k == 0 ? Rgb{1.0, 0.8, 0.6} : Rgb{0.6, 0.8, 1.0};
    s.entities.push_back(e);
  }
  s.validate();
  return s;
}

HiddenVideoScript constant_script(int frames, int height, int width, int channels) {
  HiddenVideoScript s = two_blobs_script(frames, height, width, channels);
  s.kind = HiddenVideoScript::Kind::constant;
  s.background = 0.05;
  return s;
}

Tensor synth_hidden_video(const HiddenVideoScript& script, std::uint64_t seed) {
  script.validate();
  (void)seed;  // scripts are fully specified; kept for interface symmetry with the other generators
  const std::size_t C = script.channels, T = script.frames, H = script.height, W = script.width;
  Tensor out({C, T, H, W});
  for (std::size_t f = 0; f < T; ++f) {
    const int frame = script.kind == HiddenVideoScript::Kind::constant ? 0 : static_cast<int>(f);
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        Rgb v{script.background, script.background, script.background};
        for (const Entity& e : script.entities) {
          const auto [ex, ey] = e.position(frame);
          double w;
          if (e.profile == Entity::Profile::disk) {
            w = disk_coverage(static_cast<double>(c), static_cast<double>(r), ex, ey, e.radius);
          } else {
            const double dx = c - ex, dy = r - ey;
            w = std::exp(-(dx * dx + dy * dy) / (2.0 * e.radius * e.radius));
          }
          for (int ch = 0; ch < 3; ++ch) v[ch] += w * e.color[ch];
        }
        for (std::size_t ch = 0; ch < C; ++ch) out[((ch * T + f) * H + r) * W + c] = std::clamp(v[ch], 0.0, 1.0);
      }
  }
  return out;
}

ObservedVideo observe(const Tensor& transport, const Tensor& hidden, const SceneConfig& cfg, std::uint64_t seed) {
  const TransportDims td = transport_dims(transport);
  if (td.obs_height != cfg.obs_height || td.obs_width != cfg.obs_width || td.channels != cfg.channels) {
    throw ShapeError("observe: transport " + shape_string(transport.shape()) + " does not match the scene config");
  }
  ObservedVideo out;
  out.frames = apply_transport(transport, hidden);
  out.black_frame = ambient_image(cfg);
  out.mask = Tensor({static_cast<std::size_t>(cfg.obs_height), static_cast<std::size_t>(cfg.obs_width)});

  const VideoDims d = video_dims(out.frames);
  const std::size_t n = static_cast<std::size_t>(d.height) * d.width;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int c = 0; c < d.channels; ++c)
    for (int f = 0; f < d.frames; ++f) {
      double* frame = out.frames.ptr() + (static_cast<std::size_t>(c) * d.frames + f) * n;
      for (std::size_t p = 0; p < n; ++p) {
        double v = frame[p] + out.black_frame[c * n + p];
        if (cfg.noise_std > 0.0) v += cfg.noise_std * noise(rng);
        if (v >= cfg.saturation) out.mask[p] = 1.0;
        frame[p] = std::clamp(v, 0.0, cfg.saturation);
      }
    }
  return out;
}

ScenePreset scene_preset(const std::string& name, int channels) {
  ScenePreset p;
  p.scene.channels = channels;
  p.scene.occluders = default_occluders();
  if (name == "desk-disks") {
    p.scene.obs_height = 24;
    p.scene.obs_width = 32;
    p.scene.hid_height = 8;
    p.scene.hid_width = 8;
    p.scene.noise_std = 0.0005;
    p.script = moving_disks_script(200, 8, 8, channels, 1);
  } else if (name == "nonblind") {
    p.scene.obs_height = 48;
    p.scene.obs_width = 48;
    p.scene.hid_height = 16;
    p.scene.hid_width = 16;
    p.script = moving_disks_script(64, 16, 16, channels, 1);
  } else if (name == "full-scale") {
    p.scene.obs_height = 96;
    p.scene.obs_width = 128;
    p.scene.hid_height = 16;
    p.scene.hid_width = 16;
    p.script = moving_disks_script(1000, 16, 16, channels, 1);
  } else {
    throw ConfigError("unknown scene preset '" + name + "' (desk-disks, nonblind, full-scale)");
  }
  p.scene.validate();
  return p;
}

}  // namespace lumen
