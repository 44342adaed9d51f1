#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "wsf/nn/tensor.hpp"

namespace wsf::nn {

// Handle to a node on a Graph.
struct Var {
  std::size_t id = 0;
};

class Graph;
using BackwardFn = std::function<void(Graph&, std::size_t self)>;

// Reverse-mode tape. Nodes are appended in evaluation order, so reverse id order is a
// valid topological order for backpropagation. A graph built with record_grad=false
// keeps values only and is the inference path.
class Graph {
 public:
  explicit Graph(bool record_grad = true) : record_(record_grad) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  // Leaf holding its own copy of the value; never receives gradient.
  Var constant(Tensor value);
  // Leaf borrowing a tensor that must outlive the graph; never receives gradient.
  Var constant_ref(const Tensor& value);
  // Leaf bound to a parameter; backward() accumulates into p.grad.
  Var param(Parameter& p);

  // Appends an op result. Raises NonFiniteError if the value contains NaN/Inf.
  Var push(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

  const Tensor& value(Var v) const { return value(v.id); }
  const Tensor& value(std::size_t id) const;
  // Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Backpropagates d(loss)/d(node) from a scalar loss and accumulates parameter gradients.
  void backward(Var loss);

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Parameter* param = nullptr;
    Tensor grad;
    bool requires_grad = false;
    const char* op = "";
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool record_;
  bool backward_done_ = false;
};

}  // namespace wsf::nn
