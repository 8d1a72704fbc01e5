#include "lumen/adam.hpp"

#include <cmath>

#include "lumen/errors.hpp"

namespace lumen {

AdamState adam_init(const std::vector<Parameter*>& params, const AdamOptions& options) {
  AdamState s;
  s.options = options;
  for (const Parameter* p : params) {
    s.first_moment.emplace_back(p->value.shape());
    s.second_moment.emplace_back(p->value.shape());
  }
  return s;
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: state holds " + std::to_string(state.first_moment.size()) +
                     " moments for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& p = *params[k];
    if (p.grad.shape() != p.value.shape() || state.first_moment[k].shape() != p.value.shape()) {
      throw ShapeError("adam_step: gradient/moment shape mismatch for parameter '" + p.name + "'");
    }
    if (!p.grad.all_finite()) {
      throw NumericalError("adam_step: non-finite gradient for parameter '" + p.name + "'");
    }
  }

  const AdamOptions& o = state.options;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      p.value[i] -= o.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.epsilon);
    }
  }
}

Adam::Adam(std::vector<Parameter*> params, AdamOptions options)
    : params_(std::move(params)), state_(adam_init(params_, options)) {}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

}  // namespace lumen
