#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "lumen/autodiff.hpp"

namespace lumen {

enum class LayerKind { conv2d, conv3d, upsample_nearest, upsample_bilinear };
enum class Activation { tanh, leaky_relu, exp, exp_plus_tanh, linear };

std::string_view to_string(LayerKind k);
std::string_view to_string(Activation a);

struct LayerSpec {
  int id = 0;  // table numbering; cosmetic
  LayerKind kind = LayerKind::conv2d;
  int out_features = 0;
  std::vector<int> filter_size;
  Activation activation = Activation::linear;
  bool inject_coords = false;
  /// Multiply a separable Hann window onto this layer's activated output.
  bool hann_window = false;
  /// Name of an auxiliary map concatenated to this layer's input.
  std::string aux;

  bool is_conv() const { return kind == LayerKind::conv2d || kind == LayerKind::conv3d; }
};

/// Declarative generator: a learnable seed tensor followed by a linear chain
/// of convolutions and upsamplings. Shapes exclude the channel axis.
struct NetworkSpec {
  std::vector<LayerSpec> layers;
  std::vector<int> seed_shape;
  int seed_channels = 1;
  /// Spatial extents of the generated output; the final feature map is
  /// cropped to this if the upsampling chain overshoots.
  std::vector<int> output_shape;
  double input_dropout_p = 0.0;
  double output_scale = 1.0;
  double leaky_slope = 0.1;
  /// Initial value of the exp_plus_tanh head's black level.
  double blacklevel_init = 1.0;
  std::vector<std::string> aux_inputs;

  /// Channel count after the output head.
  int output_channels() const;
};

/// Spatial shape after each layer; validates the whole chain.
/// Throws ShapeError for an inconsistent spec.
std::vector<std::vector<int>> shape_chain(const NetworkSpec& spec);

/// Plain text table (one layer per line) and its parser.
std::string format_network_spec(const NetworkSpec& spec);
NetworkSpec parse_network_spec(std::string_view text);

/// Two-dimensional matrix-factor generator: five bilinear doublings from
/// 1/32 scale, tanh convs, coordinate channels on every conv, row-mean aux map
/// before the second-to-last layer, exp output. `width_scale` multiplies all
/// hidden feature counts.
NetworkSpec matrix_factor_spec(int height, int width, double width_scale = 1.0);

/// Hidden-video generator over (t, i, j): 3-D convs, three nearest doublings
/// from (t/8, i/8, j/8), coordinates up to layer 7, exp + tanh head with a
/// learnable black level, output scaled by 1/(i*j).
NetworkSpec hidden_video_spec(int frames, int height, int width, int channels, double width_scale = 1.0);

/// Mixing-weight generator: 2-D convs from (i/8, j/8) to (i, j), Hann windows
/// on layers 8-10, linear output with rank*channels channels.
NetworkSpec mixing_weight_spec(int height, int width, int rank, int channels, double width_scale = 1.0);

/// Auxiliary constant inputs, shape (C, S...). Extents of 1 broadcast;
/// others are resampled to the feature map by nearest neighbour.
using AuxInputs = std::map<std::string, Tensor>;

/// Appends one coordinate channel per spatial axis, linear in [-1, 1]
/// (0 for an axis of length 1). Coordinate channels are constants.
Var inject_coordinates(const Var& features);

/// Symmetric Hann window of length n: 0.5 - 0.5 cos(2 pi k / (n - 1)).
std::vector<double> hann_1d(std::size_t n);
/// Separable window over all spatial axes of a (C, S...) shape; returns (S...).
Tensor hann_window(const std::vector<std::size_t>& spatial);
Var apply_hann(const Var& features);

/// Zeroes each spatial position across all channels with probability p and
/// rescales survivors by 1/(1-p); p = 1 zeroes everything.
Var seed_dropout(const Var& seed, double p, std::mt19937_64& rng);

/// An instantiated generator with its trainable parameters.
class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t seed);

  /// Runs the generator on `tape`. Dropout on the seed is applied only when
  /// `dropout_rng` is non-null.
  Var forward(Tape& tape, std::mt19937_64* dropout_rng = nullptr, const AuxInputs& aux = {}) const;

  std::vector<Parameter*> parameters();
  const NetworkSpec& spec() const { return spec_; }
  Parameter& seed_tensor() { return *seed_; }
  const Parameter& seed_tensor() const { return *seed_; }
  std::size_t parameter_count() const;

 private:
  NetworkSpec spec_;
  std::vector<std::vector<int>> chain_;
  std::unique_ptr<Parameter> seed_;
  std::vector<std::unique_ptr<Parameter>> weights_;  // null for upsample layers
  std::vector<std::unique_ptr<Parameter>> biases_;
  std::unique_ptr<Parameter> blacklevel_;
};

/// Builds a generator from a spec; weights uniform in +-sqrt(1/fan_in), seed
/// tensor standard normal.
inline Network build_network(const NetworkSpec& spec, std::uint64_t seed) { return Network(spec, seed); }

}  // namespace lumen
