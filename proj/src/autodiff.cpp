#include "lumen/autodiff.hpp"

#include "lumen/errors.hpp"

namespace lumen {

Parameter::Parameter(Tensor init, std::string param_name)
    : value(std::move(init)), grad(value.shape()), name(std::move(param_name)) {}

void Parameter::zero_grad() { grad.fill(0.0); }

Tape& Var::tape() const {
  if (!tape_) throw Error("use of an unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().nodes_[id_].value; }
const Shape& Var::shape() const { return value().shape(); }
bool Var::requires_grad() const { return tape().nodes_[id_].requires_grad; }

const Tensor& Var::grad() const {
  auto& node = tape().nodes_[id_];
  if (node.grad.empty()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

Var Tape::push(Node node) {
  if (consumed_) throw Error("tape already consumed by backward()");
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  return push(std::move(n));
}

Var Tape::record(std::string_view op, Tensor value, const std::vector<Var>& inputs,
                 BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite output from op '" + std::string(op) + "'");
  }
  Node n;
  n.value = std::move(value);
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw Error("op '" + std::string(op) + "' mixes tapes");
    if (nodes_[in.id()].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::set_backward(const Var& v, BackwardFn backward) {
  if (&v.tape() != this) throw Error("set_backward: node belongs to another tape");
  auto& node = nodes_[v.id()];
  if (node.backward) throw Error("set_backward: node already has a backward function");
  if (node.requires_grad) node.backward = std::move(backward);
}

Tensor* Tape::grad_sink(const Var& v) {
  auto& node = nodes_[v.id()];
  if (!node.requires_grad) return nullptr;
  if (node.grad.empty()) node.grad = Tensor(node.value.shape());
  return &node.grad;
}

void Tape::backward(const Var& root) {
  if (consumed_) throw Error("tape already consumed by backward()");
  if (nodes_.empty()) throw Error("backward() on an empty tape");
  if (&root.tape() != this) throw Error("backward() root belongs to another tape");
  auto& r = nodes_[root.id()];
  if (r.value.size() != 1) {
    throw ShapeError("backward() root must be scalar, got " + shape_string(r.value.shape()));
  }
  consumed_ = true;
  if (!r.requires_grad) return;
  r.grad = Tensor(r.value.shape(), 1.0);

  for (std::size_t i = root.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.grad.empty()) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.param) {
      auto& pg = node.param->grad;
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += node.grad[k];
    }
  }
}

}  // namespace lumen
