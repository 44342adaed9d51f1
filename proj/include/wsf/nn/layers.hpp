#pragma once

#include <string>
#include <variant>
#include <vector>

#include "wsf/common/rng.hpp"
#include "wsf/nn/graph.hpp"
#include "wsf/nn/ops.hpp"

namespace wsf::nn {

// Kaiming-uniform fan-in initialization: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng);

struct Dense {
  Parameter weight;  // [in, out]
  Parameter bias;    // [out]

  Dense() = default;
  Dense(std::size_t in, std::size_t out, Rng& rng);
  // Zero-initialized layer.
  static Dense zeros(std::size_t in, std::size_t out);

  std::size_t in_features() const { return weight.value.dim(0); }
  std::size_t out_features() const { return weight.value.dim(1); }

  Var forward(Graph& g, Var x) { return dense(g, x, g.param(weight), g.param(bias), "dense"); }
  Var forward(Graph& g, Var x) const {
    return dense(g, x, g.constant_ref(weight.value), g.constant_ref(bias.value), "dense");
  }
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
};

struct Conv2d {
  Parameter weight;  // [out, in, k, k]
  Parameter bias;    // [out]

  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng);

  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }

  Var forward(Graph& g, Var x) { return conv2d(g, x, g.param(weight), g.param(bias), "conv2d"); }
  Var forward(Graph& g, Var x) const {
    return conv2d(g, x, g.constant_ref(weight.value), g.constant_ref(bias.value), "conv2d");
  }
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
};

struct Relu {
  Var forward(Graph& g, Var x) const { return relu(g, x); }
  std::vector<Parameter*> parameters() { return {}; }
};

struct MaxPool2 {
  Var forward(Graph& g, Var x) const { return max_pool2(g, x); }
  std::vector<Parameter*> parameters() { return {}; }
};

struct Flatten {
  Var forward(Graph& g, Var x) const { return flatten(g, x); }
  std::vector<Parameter*> parameters() { return {}; }
};

struct Softmax {
  Var forward(Graph& g, Var x) const { return softmax(g, x); }
  std::vector<Parameter*> parameters() { return {}; }
};

using Layer = std::variant<Dense, Conv2d, Relu, MaxPool2, Flatten, Softmax>;

std::string layer_kind(const Layer& layer);

// Result of a standalone forward pass: the tape plus its output node.
struct ForwardResult {
  Graph graph;
  Var output;
  const Tensor& value() const { return graph.value(output); }
};

// Ordered stack of layers with a fixed per-example input shape. Copying a Sequential
// deep-copies its parameters.
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(Shape example_shape) : example_shape_(std::move(example_shape)) {}

  Sequential& add(Layer layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }

  const Shape& example_shape() const noexcept { return example_shape_; }
  std::size_t size() const noexcept { return layers_.size(); }
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }

  // Records every layer on g; returns each layer's output in order.
  std::vector<Var> forward_trace(Graph& g, Var input);
  std::vector<Var> forward_trace(Graph& g, Var input) const;
  Var forward(Graph& g, Var input) { return forward_trace(g, input).back(); }
  Var forward(Graph& g, Var input) const { return forward_trace(g, input).back(); }

  // Training-mode forward on a fresh tape.
  ForwardResult forward(const Tensor& batch);
  // Inference-mode forward on a fresh tape (no gradient recording).
  ForwardResult infer(const Tensor& batch) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  // Parameters named "<prefix><layer index>.<weight|bias>".
  void assign_names(const std::string& prefix);
  void set_trainable(bool trainable);

 private:
  void check_input(const Tensor& batch) const;
  template <class Self>
  static std::vector<Var> trace_impl(Self& self, Graph& g, Var input);

  Shape example_shape_;
  std::vector<Layer> layers_;
};

void zero_grad(std::span<Parameter* const> params);

}  // namespace wsf::nn
