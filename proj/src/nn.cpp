#include "lumen/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "lumen/errors.hpp"
#include "lumen/ops.hpp"

namespace lumen {

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::upsample_nearest: return "upsample_nearest";
    case LayerKind::upsample_bilinear: return "upsample_bilinear";
  }
  return "?";
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::exp: return "exp";
    case Activation::exp_plus_tanh: return "exp_plus_tanh";
    case Activation::linear: return "linear";
  }
  return "?";
}

namespace {

LayerKind parse_kind(const std::string& s) {
  for (auto k : {LayerKind::conv2d, LayerKind::conv3d, LayerKind::upsample_nearest, LayerKind::upsample_bilinear}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown layer kind '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  for (auto a : {Activation::tanh, Activation::leaky_relu, Activation::exp, Activation::exp_plus_tanh,
                 Activation::linear}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("unknown activation '" + s + "'");
}

std::string join_extents(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parse_extents(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument(part);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("bad extent list '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty extent list");
  return out;
}

int scaled(int features, double width_scale) {
  return std::max(1, static_cast<int>(std::lround(features * width_scale)));
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

LayerSpec conv_layer(int id, LayerKind kind, int features, std::vector<int> filter, Activation act,
                     bool coords) {
  LayerSpec l;
  l.id = id;
  l.kind = kind;
  l.out_features = features;
  l.filter_size = std::move(filter);
  l.activation = act;
  l.inject_coords = coords;
  return l;
}

LayerSpec upsample_layer(int id, LayerKind kind) {
  LayerSpec l;
  l.id = id;
  l.kind = kind;
  return l;
}

}  // namespace

int NetworkSpec::output_channels() const {
  if (layers.empty()) return seed_channels;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (it->is_conv()) {
      return it->activation == Activation::exp_plus_tanh ? it->out_features / 2 : it->out_features;
    }
  }
  return seed_channels;
}

std::vector<std::vector<int>> shape_chain(const NetworkSpec& spec) {
  const std::size_t nd = spec.seed_shape.size();
  if (nd == 0 || nd > 3) throw ShapeError("seed shape must have 1-3 spatial axes");
  if (spec.output_shape.size() != nd) throw ShapeError("output shape rank differs from seed rank");
  if (spec.seed_channels < 1) throw ShapeError("seed_channels must be positive");
  if (spec.input_dropout_p < 0.0 || spec.input_dropout_p > 1.0) throw ConfigError("dropout p outside [0,1]");
  for (int e : spec.seed_shape) {
    if (e < 1) throw ShapeError("seed extents must be positive");
  }

  std::vector<std::vector<int>> chain;
  std::vector<int> cur = spec.seed_shape;
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& l = spec.layers[li];
    if (l.is_conv()) {
      const std::size_t want = l.kind == LayerKind::conv2d ? 2 : 3;
      if (nd != want) {
        throw ShapeError("layer " + std::to_string(l.id) + ": " + std::string(to_string(l.kind)) + " on a " +
                         std::to_string(nd) + "-D feature map");
      }
      if (l.filter_size.size() != nd) throw ShapeError("layer " + std::to_string(l.id) + ": filter rank mismatch");
      if (l.out_features < 1) throw ShapeError("layer " + std::to_string(l.id) + ": out_features must be >= 1");
      if (l.activation == Activation::exp_plus_tanh) {
        if (li + 1 != spec.layers.size()) throw ShapeError("exp_plus_tanh is only valid on the last layer");
        if (l.out_features % 2 != 0) throw ShapeError("exp_plus_tanh needs an even feature count");
      }
      if (!l.aux.empty() &&
          std::find(spec.aux_inputs.begin(), spec.aux_inputs.end(), l.aux) == spec.aux_inputs.end()) {
        throw ShapeError("layer " + std::to_string(l.id) + ": undeclared aux input '" + l.aux + "'");
      }
    } else {
      if (l.out_features != 0 || !l.filter_size.empty()) {
        throw ShapeError("layer " + std::to_string(l.id) + ": upsample layers carry no weights");
      }
      for (std::size_t a = 0; a < nd; ++a) {
        if (cur[a] < spec.output_shape[a]) cur[a] *= 2;
      }
    }
    if (l.hann_window) {
      for (int e : cur) {
        if (e < 2) throw ShapeError("layer " + std::to_string(l.id) + ": Hann window on an axis shorter than 2");
      }
    }
    chain.push_back(cur);
  }
  for (std::size_t a = 0; a < nd; ++a) {
    if (cur[a] < spec.output_shape[a]) {
      throw ShapeError("upsampling chain ends at " + join_extents(cur) + ", short of output " +
                       join_extents(spec.output_shape));
    }
  }
  return chain;
}

std::string format_network_spec(const NetworkSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  os << "network seed_channels=" << spec.seed_channels << " seed=" << join_extents(spec.seed_shape)
     << " output=" << join_extents(spec.output_shape) << " dropout=" << spec.input_dropout_p
     << " scale=" << spec.output_scale << " slope=" << spec.leaky_slope << " blacklevel=" << spec.blacklevel_init;
  for (const auto& a : spec.aux_inputs) os << " aux=" << a;
  os << "\n# id type features filter activation flags\n";
  for (const auto& l : spec.layers) {
    os << l.id << ' ' << to_string(l.kind);
    if (l.is_conv()) {
      os << ' ' << l.out_features << ' ' << join_extents(l.filter_size) << ' ' << to_string(l.activation);
      if (l.inject_coords) os << " coords";
      if (l.hann_window) os << " hann";
      if (!l.aux.empty()) os << " aux=" << l.aux;
    }
    os << '\n';
  }
  return os.str();
}

NetworkSpec parse_network_spec(std::string_view text) {
  NetworkSpec spec;
  bool have_header = false;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    try {
      if (tok[0] == "network") {
        have_header = true;
        for (std::size_t i = 1; i < tok.size(); ++i) {
          const auto eq = tok[i].find('=');
          if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + tok[i] + "'");
          const std::string key = tok[i].substr(0, eq), val = tok[i].substr(eq + 1);
          if (key == "seed_channels") spec.seed_channels = std::stoi(val);
          else if (key == "seed") spec.seed_shape = parse_extents(val);
          else if (key == "output") spec.output_shape = parse_extents(val);
          else if (key == "dropout") spec.input_dropout_p = std::stod(val);
          else if (key == "scale") spec.output_scale = std::stod(val);
          else if (key == "slope") spec.leaky_slope = std::stod(val);
          else if (key == "blacklevel") spec.blacklevel_init = std::stod(val);
          else if (key == "aux") spec.aux_inputs.push_back(val);
          else throw ConfigError("unknown network key '" + key + "'");
        }
        continue;
      }
      LayerSpec l;
      l.id = std::stoi(tok.at(0));
      l.kind = parse_kind(tok.at(1));
      if (l.is_conv()) {
        if (tok.size() < 5) throw ConfigError("conv layer needs: id type features filter activation");
        l.out_features = std::stoi(tok[2]);
        l.filter_size = parse_extents(tok[3]);
        l.activation = parse_activation(tok[4]);
        for (std::size_t i = 5; i < tok.size(); ++i) {
          if (tok[i] == "coords") l.inject_coords = true;
          else if (tok[i] == "hann") l.hann_window = true;
          else if (tok[i].rfind("aux=", 0) == 0) l.aux = tok[i].substr(4);
          else throw ConfigError("unknown layer flag '" + tok[i] + "'");
        }
      } else if (tok.size() != 2) {
        throw ConfigError("upsample layer takes no arguments");
      }
      spec.layers.push_back(std::move(l));
    } catch (const ConfigError& e) {
      throw ConfigError("network spec line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception& e) {
      throw ConfigError("network spec line " + std::to_string(lineno) + ": malformed (" + e.what() + ")");
    }
  }
  if (!have_header) throw ConfigError("network spec lacks a 'network' header line");
  shape_chain(spec);
  return spec;
}

NetworkSpec matrix_factor_spec(int height, int width, double ws) {
  NetworkSpec s;
  s.seed_channels = 64;
  s.seed_shape = {ceil_div(height, 32), ceil_div(width, 32)};
  s.output_shape = {height, width};
  s.input_dropout_p = 0.5;
  s.aux_inputs = {"row_mean"};
  const auto up = LayerKind::upsample_bilinear;
  const auto c2 = LayerKind::conv2d;
  s.layers = {
      conv_layer(1, c2, scaled(32, ws), {4, 4}, Activation::tanh, true),
      upsample_layer(2, up),
      conv_layer(3, c2, scaled(64, ws), {4, 4}, Activation::tanh, true),
      upsample_layer(4, up),
      conv_layer(5, c2, scaled(64, ws), {4, 4}, Activation::tanh, true),
      upsample_layer(6, up),
      conv_layer(7, c2, scaled(128, ws), {4, 4}, Activation::tanh, true),
      upsample_layer(8, up),
      conv_layer(9, c2, scaled(128, ws), {4, 4}, Activation::tanh, true),
      upsample_layer(10, up),
      conv_layer(11, c2, scaled(64, ws), {3, 3}, Activation::leaky_relu, true),
      conv_layer(12, c2, 1, {3, 3}, Activation::exp, true),
  };
  s.layers[10].aux = "row_mean";
  return s;
}

NetworkSpec hidden_video_spec(int frames, int height, int width, int channels, double ws) {
  NetworkSpec s;
  s.seed_channels = 4;
  s.seed_shape = {ceil_div(frames, 8), ceil_div(height, 8), ceil_div(width, 8)};
  s.output_shape = {frames, height, width};
  s.output_scale = 1.0 / (static_cast<double>(height) * width);
  const auto up = LayerKind::upsample_nearest;
  const auto c3 = LayerKind::conv3d;
  const auto lr = Activation::leaky_relu;
  const std::vector<int> k{3, 3, 3};
  const int f = scaled(64, ws);
  s.layers = {
      conv_layer(1, c3, f, k, lr, true),
      upsample_layer(2, up),
      conv_layer(3, c3, f, k, lr, true),
      conv_layer(4, c3, f, k, lr, true),
      upsample_layer(5, up),
      conv_layer(6, c3, f, k, lr, true),
      conv_layer(7, c3, f, k, lr, true),
      conv_layer(8, c3, f, k, lr, false),
      upsample_layer(9, up),
      conv_layer(10, c3, f, k, lr, false),
      conv_layer(11, c3, scaled(32, ws), k, lr, false),
      conv_layer(12, c3, 2 * channels, k, Activation::exp_plus_tanh, false),
  };
  return s;
}

NetworkSpec mixing_weight_spec(int height, int width, int rank, int channels, double ws) {
  NetworkSpec s;
  s.seed_channels = 32;
  s.seed_shape = {ceil_div(height, 8), ceil_div(width, 8)};
  s.output_shape = {height, width};
  const auto up = LayerKind::upsample_nearest;
  const auto c2 = LayerKind::conv2d;
  const auto lr = Activation::leaky_relu;
  const std::vector<int> k{3, 3};
  s.layers = {
      conv_layer(1, c2, scaled(32, ws), k, lr, true),
      upsample_layer(2, up),
      conv_layer(4, c2, scaled(64, ws), k, lr, true),
      conv_layer(5, c2, scaled(64, ws), k, lr, true),
      conv_layer(6, c2, scaled(64, ws), k, lr, true),
      upsample_layer(7, up),
      conv_layer(8, c2, scaled(64, ws), k, lr, true),
      conv_layer(9, c2, scaled(64, ws), k, lr, true),
      conv_layer(10, c2, scaled(64, ws), k, lr, true),
      upsample_layer(11, up),
      conv_layer(12, c2, scaled(128, ws), k, lr, false),
      conv_layer(13, c2, scaled(256, ws), k, lr, false),
      conv_layer(14, c2, rank * channels, k, Activation::linear, false),
  };
  for (std::size_t i : {6u, 7u, 8u}) s.layers[i].hann_window = true;
  return s;
}

Var inject_coordinates(const Var& features) {
  const Shape& s = features.shape();
  if (s.size() < 2) throw ShapeError("inject_coordinates: expected (C,S...), got " + shape_string(s));
  const std::size_t nd = s.size() - 1;
  Shape cs = s;
  cs[0] = nd;
  Tensor coords(cs);
  const std::size_t n = numel(Shape(s.begin() + 1, s.end()));
  const auto st = strides_of(Shape(s.begin() + 1, s.end()));
  for (std::size_t a = 0; a < nd; ++a) {
    const std::size_t len = s[1 + a];
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t k = (p / st[a]) % len;
      coords[a * n + p] = len == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(len - 1);
    }
  }
  return concat({features, features.tape().constant(std::move(coords))}, 0);
}

std::vector<double> hann_1d(std::size_t n) {
  if (n < 2) throw ShapeError("Hann window needs length >= 2");
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    w[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n - 1));
  }
  // Pin the exact endpoint and centre values against cosine rounding.
  w.front() = w.back() = 0.0;
  if (n % 2 == 1) w[n / 2] = 1.0;
  return w;
}

Tensor hann_window(const std::vector<std::size_t>& spatial) {
  Shape s(spatial.begin(), spatial.end());
  Tensor out(s, 1.0);
  const auto st = strides_of(s);
  for (std::size_t a = 0; a < s.size(); ++a) {
    const auto w = hann_1d(s[a]);
    for (std::size_t p = 0; p < out.size(); ++p) out[p] *= w[(p / st[a]) % s[a]];
  }
  return out;
}

Var apply_hann(const Var& features) {
  const Shape& s = features.shape();
  if (s.size() < 2) throw ShapeError("apply_hann: expected (C,S...)");
  return mul_trailing(features, features.tape().constant(hann_window({s.begin() + 1, s.end()})));
}

Var seed_dropout(const Var& seed, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p > 1.0) throw ConfigError("dropout probability outside [0,1]");
  if (p == 0.0) return seed;
  const Shape& s = seed.shape();
  Tensor mask(Shape(s.begin() + 1, s.end()), 0.0);
  if (p < 1.0) {
    std::bernoulli_distribution keep(1.0 - p);
    const double survivor = 1.0 / (1.0 - p);
    for (auto& v : mask.data()) v = keep(rng) ? survivor : 0.0;
  }
  return mul_trailing(seed, seed.tape().constant(std::move(mask)));
}

namespace {

// Resamples an auxiliary spatial map onto `target`; extent-1 axes broadcast.
Tensor fit_aux(const Tensor& aux, const std::vector<int>& target) {
  if (aux.rank() != target.size()) {
    throw ShapeError("aux map rank " + std::to_string(aux.rank()) + " differs from feature rank " +
                     std::to_string(target.size()));
  }
  Shape ts(target.begin(), target.end());
  Shape out_shape{1};
  out_shape.insert(out_shape.end(), ts.begin(), ts.end());
  Tensor out(out_shape);
  const auto tst = strides_of(ts);
  const auto ast = strides_of(aux.shape());
  for (std::size_t p = 0; p < out.size(); ++p) {
    std::size_t src = 0;
    for (std::size_t a = 0; a < ts.size(); ++a) {
      const std::size_t k = (p / tst[a]) % ts[a];
      const std::size_t n = aux.dim(a);
      const std::size_t m = n == 1 ? 0 : (k * n) / ts[a];
      src += m * ast[a];
    }
    out[p] = aux[src];
  }
  return out;
}

}  // namespace

Network::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  chain_ = shape_chain(spec_);
  std::mt19937_64 rng(seed);
  const std::size_t nd = spec_.seed_shape.size();

  Shape ss{static_cast<std::size_t>(spec_.seed_channels)};
  for (int e : spec_.seed_shape) ss.push_back(static_cast<std::size_t>(e));
  Tensor seed_value(ss);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : seed_value.data()) v = normal(rng);
  seed_ = std::make_unique<Parameter>(std::move(seed_value), "seed");

  std::size_t channels = static_cast<std::size_t>(spec_.seed_channels);
  for (const auto& l : spec_.layers) {
    if (!l.is_conv()) {
      weights_.push_back(nullptr);
      biases_.push_back(nullptr);
      continue;
    }
    std::size_t cin = channels + (l.inject_coords ? nd : 0) + (l.aux.empty() ? 0 : 1);
    Shape ws{static_cast<std::size_t>(l.out_features), cin};
    std::size_t fan_in = cin;
    for (int k : l.filter_size) {
      ws.push_back(static_cast<std::size_t>(k));
      fan_in *= static_cast<std::size_t>(k);
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> uni(-bound, bound);
    Tensor w(ws), b(Shape{static_cast<std::size_t>(l.out_features)});
    for (auto& v : w.data()) v = uni(rng);
    for (auto& v : b.data()) v = uni(rng);
    const std::string tag = "layer" + std::to_string(l.id);
    weights_.push_back(std::make_unique<Parameter>(std::move(w), tag + ".weight"));
    biases_.push_back(std::make_unique<Parameter>(std::move(b), tag + ".bias"));
    channels = static_cast<std::size_t>(l.out_features);
    if (l.activation == Activation::exp_plus_tanh) {
      blacklevel_ = std::make_unique<Parameter>(Tensor(Shape{channels / 2}, spec_.blacklevel_init), "blacklevel");
    }
  }
}

Var Network::forward(Tape& tape, std::mt19937_64* dropout_rng, const AuxInputs& aux) const {
  const std::size_t nd = spec_.seed_shape.size();
  Var x = tape.param(*seed_);
  if (dropout_rng && spec_.input_dropout_p > 0.0) x = seed_dropout(x, spec_.input_dropout_p, *dropout_rng);

  std::vector<int> cur = spec_.seed_shape;
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const LayerSpec& l = spec_.layers[li];
    if (!l.is_conv()) {
      std::vector<std::size_t> axes;
      for (std::size_t a = 0; a < nd; ++a) {
        if (chain_[li][a] != cur[a]) axes.push_back(a + 1);
      }
      x = l.kind == LayerKind::upsample_nearest ? upsample_nearest(x, axes) : upsample_bilinear(x, axes);
      cur = chain_[li];
      continue;
    }
    std::vector<Var> parts{x};
    if (l.inject_coords) parts = {inject_coordinates(x)};
    if (!l.aux.empty()) {
      auto it = aux.find(l.aux);
      if (it == aux.end()) throw ConfigError("missing aux input '" + l.aux + "'");
      parts.push_back(tape.constant(fit_aux(it->second, cur)));
    }
    Var in = parts.size() == 1 ? parts[0] : concat(parts, 0);
    x = conv(in, tape.param(*weights_[li]), tape.param(*biases_[li]));
    switch (l.activation) {
      case Activation::tanh: x = tanh(x); break;
      case Activation::leaky_relu: x = leaky_relu(x, spec_.leaky_slope); break;
      case Activation::exp: x = exp(x); break;
      case Activation::linear: break;
      case Activation::exp_plus_tanh: {
        const std::size_t c = static_cast<std::size_t>(l.out_features) / 2;
        Var e = exp(narrow(x, 0, 0, c));
        Var t = add_scalar(scale(tanh(narrow(x, 0, c, c)), 0.5), 0.5);
        x = add(e, channel_scale(t, tape.param(*blacklevel_)));
        break;
      }
    }
    if (l.hann_window) x = apply_hann(x);
  }
  for (std::size_t a = 0; a < nd; ++a) {
    if (cur[a] > spec_.output_shape[a]) x = narrow(x, a + 1, 0, static_cast<std::size_t>(spec_.output_shape[a]));
  }
  if (spec_.output_scale != 1.0) x = scale(x, spec_.output_scale);
  return x;
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> ps{seed_.get()};
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (weights_[i]) {
      ps.push_back(weights_[i].get());
      ps.push_back(biases_[i].get());
    }
  }
  if (blacklevel_) ps.push_back(blacklevel_.get());
  return ps;
}

std::size_t Network::parameter_count() const {
  std::size_t n = seed_->value.size();
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (weights_[i]) n += weights_[i]->value.size() + biases_[i]->value.size();
  }
  if (blacklevel_) n += blacklevel_->value.size();
  return n;
}

}  // namespace lumen
