#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "lumen/tensor.hpp"

namespace lumen {

class Tape;

/// Trainable tensor that outlives individual tapes. Gradients from each
/// backward pass are added into `grad`.
struct Parameter {
  explicit Parameter(Tensor init, std::string param_name = {});

  Tensor value;
  Tensor grad;
  std::string name;

  void zero_grad();
};

/// Handle to a node recorded on a tape.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const;
  bool requires_grad() const;
  /// Gradient after Tape::backward. Zeros if the node was not reached.
  const Tensor& grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run record of operations. A tape is built once per forward pass
/// and consumed by a single call to backward().
class Tape {
 public:
  /// Receives the gradient of the node's output; accumulates into inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  /// Leaf bound to a parameter; backward() adds its gradient to p.grad.
  Var param(Parameter& p);

  /// Appends a computed node. Throws NumericalError on non-finite values.
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs,
             BackwardFn backward);

  /// Attaches a backward function to a node recorded without one. For ops
  /// whose backward needs the node's own output.
  void set_backward(const Var& v, BackwardFn backward);

  /// Gradient buffer for accumulation, or nullptr if `v` needs no gradient.
  Tensor* grad_sink(const Var& v);

  void backward(const Var& root);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace lumen
