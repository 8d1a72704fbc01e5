#pragma once

#include <cstdint>
#include <vector>

#include "lumen/autodiff.hpp"

namespace lumen {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::int64_t step_count = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  AdamOptions options;
};

/// Zero moments shaped like the given parameters.
AdamState adam_init(const std::vector<Parameter*>& params, const AdamOptions& options);

/// One bias-corrected Adam update from each parameter's accumulated grad.
void adam_step(const std::vector<Parameter*>& params, AdamState& state);

/// Parameter list plus its optimizer state.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options);

  void zero_grad();
  void step() { adam_step(params_, state_); }

  const AdamState& state() const { return state_; }
  AdamState& state() { return state_; }
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  AdamState state_;
};

}  // namespace lumen
