#include "lumen/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "lumen/errors.hpp"
#include "lumen/ops.hpp"

namespace lumen {

double gradient_rel_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double h) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    Var root = f(tape, vars);
    tape.backward(root);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : xs) vars.push_back(tape.constant(t));
    return f(tape, vars).value().item();
  };

  double worst = 0.0;
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < work[k].size(); ++i) {
      const double x0 = work[k][i];
      work[k][i] = x0 + h;
      const double fp = eval(work);
      work[k][i] = x0 - h;
      const double fm = eval(work);
      work[k][i] = x0;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[k][i];
      diff2 += (ana - num) * (ana - num);
      a2 += ana * ana;
      n2 += num * num;
    }
    const double denom = std::sqrt(std::max(a2, n2));
    if (denom > 0.0) worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

namespace {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::size_t extent(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  // Values in [-1, 1] kept at least `gap` away from each kink point.
  Tensor tensor(const Shape& s, std::vector<double> kinks = {}, double gap = 1e-3) {
    Tensor t(s);
    for (auto& v : t.data()) {
      for (;;) {
        v = uniform(-1.0, 1.0);
        bool ok = true;
        for (double k : kinks) ok = ok && std::abs(v - k) > gap;
        if (ok) break;
      }
    }
    return t;
  }

  Shape shape(std::size_t min_rank, std::size_t max_rank, std::size_t max_extent = 4) {
    Shape s(extent(min_rank, max_rank));
    for (auto& d : s) d = extent(1, max_extent);
    return s;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

struct Case {
  std::vector<Tensor> inputs;
  OpAttrs attrs;
};

Case make_case(const std::string& kind, Gen& g) {
  Case c;
  auto& in = c.inputs;
  auto& at = c.attrs;
  if (kind == "add" || kind == "sub" || kind == "mul") {
    Shape s = g.shape(1, 3);
    in = {g.tensor(s), g.tensor(s)};
  } else if (kind == "mul_trailing") {
    Shape s = g.shape(2, 3);
    Shape tail(s.begin() + static_cast<long>(g.extent(1, s.size() - 1)), s.end());
    in = {g.tensor(s), g.tensor(tail)};
  } else if (kind == "scale" || kind == "add_scalar") {
    in = {g.tensor(g.shape(1, 3))};
    at.factor = g.uniform(-2.0, 2.0);
  } else if (kind == "channel_scale") {
    Shape s = g.shape(2, 3);
    in = {g.tensor(s), g.tensor(Shape{s[0]})};
  } else if (kind == "tanh" || kind == "exp" || kind == "softplus" || kind == "sum" ||
             kind == "sumsq" || kind == "l2norm" || kind == "transpose" || kind == "reshape") {
    Shape s = kind == "transpose" ? g.shape(2, 2) : g.shape(1, 3);
    in = {g.tensor(s)};
    if (kind == "reshape") at.shape = Shape{numel(s)};
  } else if (kind == "leaky_relu" || kind == "l1") {
    in = {g.tensor(g.shape(1, 3), {0.0})};
    at.slope = 0.1;
  } else if (kind == "clamp_max" || kind == "clamp_min") {
    at.bound = g.uniform(-0.5, 0.5);
    in = {g.tensor(g.shape(1, 3), {at.bound})};
  } else if (kind == "matmul") {
    const std::size_t m = g.extent(1, 4), k = g.extent(1, 4), n = g.extent(1, 4);
    in = {g.tensor({m, k}), g.tensor({k, n})};
  } else if (kind == "concat") {
    Shape s = g.shape(1, 3);
    at.axis = g.extent(0, s.size() - 1);
    const std::size_t parts = g.extent(2, 3);
    for (std::size_t p = 0; p < parts; ++p) {
      Shape sp = s;
      sp[at.axis] = g.extent(1, 3);
      in.push_back(g.tensor(sp));
    }
  } else if (kind == "narrow") {
    Shape s = g.shape(1, 3);
    at.axis = g.extent(0, s.size() - 1);
    s[at.axis] = std::max<std::size_t>(s[at.axis], 2);
    at.start = g.extent(0, s[at.axis] - 1);
    at.length = g.extent(1, s[at.axis] - at.start);
    in = {g.tensor(s)};
  } else if (kind == "finite_diff") {
    Shape s = g.shape(1, 3);
    at.axis = g.extent(0, s.size() - 1);
    s[at.axis] = g.extent(2, 6);
    at.interval = g.extent(1, s[at.axis] - 1);
    in = {g.tensor(s)};
  } else if (kind == "conv2d") {
    const std::size_t cin = g.extent(1, 3), cout = g.extent(1, 3);
    Shape xs{cin, g.extent(1, 5), g.extent(1, 5)};
    Shape ws{cout, cin, g.extent(1, 4), g.extent(1, 4)};
    in = {g.tensor(xs), g.tensor(ws), g.tensor({cout})};
  } else if (kind == "conv3d") {
    const std::size_t cin = g.extent(1, 2), cout = g.extent(1, 2);
    Shape xs{cin, g.extent(1, 4), g.extent(1, 4), g.extent(1, 4)};
    Shape ws{cout, cin, g.extent(1, 3), g.extent(1, 3), g.extent(1, 3)};
    in = {g.tensor(xs), g.tensor(ws), g.tensor({cout})};
  } else if (kind == "upsample_nearest" || kind == "upsample_bilinear") {
    Shape s = g.shape(2, 3, 3);
    for (std::size_t a = 1; a < s.size(); ++a) {
      if (g.extent(0, 1) == 1 || at.axes.empty()) at.axes.push_back(a);
    }
    in = {g.tensor(s)};
  } else {
    throw ConfigError("gradcheck: no generator for op kind '" + kind + "'");
  }
  return c;
}

}  // namespace

std::vector<GradCheckReport> gradcheck_all_ops(int cases, std::uint64_t seed, double h, double tolerance) {
  std::vector<GradCheckReport> reports;
  Gen g(seed);
  for (const auto& kind : op_kinds()) {
    GradCheckReport r;
    r.kind = kind;
    for (int i = 0; i < cases; ++i) {
      Case c = make_case(kind, g);
      // Output shape is needed to draw the reduction weights.
      Shape out_shape;
      {
        Tape probe;
        std::vector<Var> vars;
        for (const auto& t : c.inputs) vars.push_back(probe.constant(t));
        out_shape = forward_op(kind, vars, c.attrs).shape();
      }
      Tensor weights = g.tensor(out_shape);
      const OpAttrs attrs = c.attrs;
      ScalarFn f = [kind, attrs, weights](Tape& tape, std::span<const Var> xs) {
        Var out = forward_op(kind, xs, attrs);
        return sum(mul(out, tape.constant(weights)));
      };
      r.max_rel_error = std::max(r.max_rel_error, gradient_rel_error(f, c.inputs, h));
      ++r.cases;
    }
    r.passed = r.max_rel_error <= tolerance;
    reports.push_back(r);
  }
  return reports;
}

}  // namespace lumen
