#include "wsf/nn/graph.hpp"

#include "wsf/common/error.hpp"

namespace wsf::nn {

Var Graph::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

Var Graph::constant_ref(const Tensor& value) {
  Node n;
  n.borrowed = &value;
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

Var Graph::param(Parameter& p) {
  Node n;
  n.borrowed = &p.value;
  n.param = &p;
  n.requires_grad = record_;
  n.op = "param";
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

Var Graph::push(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NonFiniteError(std::string("non-finite value produced by op '") + op + "'");
  }
  Node n;
  n.owned = std::move(value);
  n.op = op;
  if (record_) {
    for (auto i : inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
    if (n.requires_grad) {
      n.inputs = std::move(inputs);
      n.backward = std::move(fn);
    }
  }
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.borrowed ? *n.borrowed : n.owned;
}

Tensor& Graph::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.shape() != value(id).shape()) n.grad = Tensor(value(id).shape());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (nodes_.empty() || loss.id >= nodes_.size()) {
    throw ProtocolError("backward called without a recorded forward pass");
  }
  if (!record_) throw ProtocolError("backward called on a graph built without gradient recording");
  if (backward_done_) throw ProtocolError("backward called twice on the same graph");
  if (value(loss).size() != 1) {
    throw ShapeError("backward expects a scalar loss, got shape " + shape_str(value(loss).shape()));
  }
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;

  grad(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param) {
      Parameter& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
      double* dst = p.grad.data();
      const double* src = n.grad.data();
      for (std::size_t j = 0; j < p.grad.size(); ++j) dst[j] += src[j];
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

}  // namespace wsf::nn
