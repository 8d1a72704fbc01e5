#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lumen/tensor.hpp"

namespace lumen {

using Rgb = std::array<double, 3>;

/// Occluder standing on the floor. Boxes are axis aligned; cylinders use
/// `half_x` as radius.
struct Occluder {
  enum class Kind { box, cylinder };
  Kind kind = Kind::box;
  double x = 0.0, y = 0.0;          // footprint centre on the floor
  double half_x = 0.1, half_y = 0.1;
  double height = 0.3;
  Rgb albedo{0.5, 0.5, 0.5};
};

/// Floor of I x J Lambertian points viewed from above, lit by an i x j grid of
/// area lights on a vertical screen at y = 0 facing the floor (y > 0).
/// Occluders cast shadows and their tops are observed in place of the floor.
struct SceneConfig {
  int obs_height = 48, obs_width = 48;  // I, J
  int hid_height = 16, hid_width = 16;  // i, j
  int channels = 1;
  std::vector<Occluder> occluders;
  Rgb floor_albedo{0.8, 0.75, 0.7};
  double ambient_level = 0.02;
  double noise_std = 0.002;
  double saturation = 1.0;

  // Geometry, in scene units.
  double floor_x_half = 1.0;                       // floor spans x in [-half, half]
  double floor_y_near = 0.15, floor_y_far = 1.65;  // observed rows, near to far
  double screen_x_half = 0.8;
  double screen_z_low = 0.1, screen_z_high = 1.1;
  int light_subsamples = 2;  // per axis, per hidden pixel

  void validate() const;
};

/// Shadow-casting scene used by the desk presets.
std::vector<Occluder> default_occluders();

/// Transport tensor (C, I, J, i, j); column p is the floor image with only
/// hidden pixel p lit at unit intensity. Scaled so the all-lit image peaks at 1.
/// `seed` drives the sub-pixel jitter of light samples.
Tensor synth_transport(const SceneConfig& cfg, std::uint64_t seed);

/// Noise-free image (C, I, J) with every hidden pixel off.
Tensor ambient_image(const SceneConfig& cfg);

struct Entity {
  enum class Profile { disk, gaussian };
  Profile profile = Profile::disk;
  double radius = 1.5;               // disk radius or gaussian sigma, hidden pixels
  double cx = 4.0, cy = 4.0;         // path centre (column, row)
  double ax = 0.0, ay = 0.0;         // path amplitudes
  double wx = 0.0, wy = 0.0;         // angular speeds, rad / frame
  double phase_x = 0.0, phase_y = 0.0;
  Rgb color{1.0, 1.0, 1.0};

  /// Position at frame f: (cx + ax cos(wx f + phase_x), cy + ay sin(wy f + phase_y)).
  std::array<double, 2> position(int frame) const;
};

struct HiddenVideoScript {
  enum class Kind { moving_disks, two_blobs_waving, constant };
  Kind kind = Kind::moving_disks;
  int frames = 64;
  int height = 16, width = 16;
  int channels = 1;
  std::vector<Entity> entities;
  double background = 0.0;

  void validate() const;
};

/// Bright disks on circular and elliptical paths.
HiddenVideoScript moving_disks_script(int frames, int height, int width, int channels, std::uint64_t seed);
HiddenVideoScript two_blobs_script(int frames, int height, int width, int channels);
HiddenVideoScript constant_script(int frames, int height, int width, int channels);

/// Renders (C, t, i, j) with values in [0, 1]. Disks are antialiased by
/// coverage; entities add and the sum is clamped to 1.
Tensor synth_hidden_video(const HiddenVideoScript& script, std::uint64_t seed);

struct ObservedVideo {
  Tensor frames;       // (C, t, I, J)
  Tensor mask;         // (I, J), 1 where any frame saturated in any channel
  Tensor black_frame;  // (C, I, J)
};

/// Z = T L + ambient + noise, clamped to [0, saturation].
ObservedVideo observe(const Tensor& transport, const Tensor& hidden, const SceneConfig& cfg, std::uint64_t seed);

/// Named desk presets: "desk-disks" (24x32 observed, 8x8 hidden, t=200,
/// noise 0.0005),
/// "nonblind" (48x48, 16x16, t=64, noise 0.002), "full-scale" (96x128, 16x16,
/// t=1000).
struct ScenePreset {
  SceneConfig scene;
  HiddenVideoScript script;
};
ScenePreset scene_preset(const std::string& name, int channels = 1);

}  // namespace lumen
