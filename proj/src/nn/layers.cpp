#include "wsf/nn/layers.hpp"

#include <cmath>

#include "wsf/common/error.hpp"

namespace wsf::nn {

void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.values()) v = u(rng);
}

Dense::Dense(std::size_t in, std::size_t out, Rng& rng)
    : weight("weight", Tensor({in, out})), bias("bias", Tensor({out})) {
  kaiming_uniform(weight.value, in, rng);
}

Dense Dense::zeros(std::size_t in, std::size_t out) {
  Dense d;
  d.weight = Parameter("weight", Tensor({in, out}));
  d.bias = Parameter("bias", Tensor({out}));
  return d;
}

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng)
    : weight("weight", Tensor({out_channels, in_channels, kernel, kernel})),
      bias("bias", Tensor({out_channels})) {
  kaiming_uniform(weight.value, in_channels * kernel * kernel, rng);
}

std::string layer_kind(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> std::string {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Dense>) return "dense";
        else if constexpr (std::is_same_v<T, Conv2d>) return "conv2d";
        else if constexpr (std::is_same_v<T, Relu>) return "relu";
        else if constexpr (std::is_same_v<T, MaxPool2>) return "maxpool2";
        else if constexpr (std::is_same_v<T, Flatten>) return "flatten";
        else return "softmax";
      },
      layer);
}

template <class Self>
std::vector<Var> Sequential::trace_impl(Self& self, Graph& g, Var input) {
  std::vector<Var> outs;
  outs.reserve(self.layers_.size());
  Var cur = input;
  for (std::size_t i = 0; i < self.layers_.size(); ++i) {
    try {
      cur = std::visit([&](auto& l) { return l.forward(g, cur); }, self.layers_[i]);
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" + layer_kind(self.layers_[i]) + "): " + e.what());
    }
    outs.push_back(cur);
  }
  if (outs.empty()) outs.push_back(input);
  return outs;
}

std::vector<Var> Sequential::forward_trace(Graph& g, Var input) { return trace_impl(*this, g, input); }
std::vector<Var> Sequential::forward_trace(Graph& g, Var input) const { return trace_impl(*this, g, input); }

void Sequential::check_input(const Tensor& batch) const {
  if (example_shape_.empty()) return;
  Shape expected = example_shape_;
  if (batch.rank() != expected.size() + 1 ||
      !std::equal(expected.begin(), expected.end(), batch.shape().begin() + 1)) {
    expected.insert(expected.begin(), batch.rank() ? batch.dim(0) : 0);
    throw ShapeError("input: expected " + shape_str(expected) + ", got " + shape_str(batch.shape()));
  }
}

ForwardResult Sequential::forward(const Tensor& batch) {
  check_input(batch);
  ForwardResult r{Graph(true), {}};
  r.output = forward(r.graph, r.graph.constant_ref(batch));
  return r;
}

ForwardResult Sequential::infer(const Tensor& batch) const {
  check_input(batch);
  ForwardResult r{Graph(false), {}};
  r.output = forward(r.graph, r.graph.constant_ref(batch));
  return r;
}

std::vector<Parameter*> Sequential::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    auto ps = std::visit([](auto& x) { return x.parameters(); }, l);
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

std::vector<const Parameter*> Sequential::parameters() const {
  auto ps = const_cast<Sequential*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

void Sequential::assign_names(const std::string& prefix) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    std::visit(
        [&](auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, Dense> || std::is_same_v<T, Conv2d>) {
            l.weight.name = prefix + std::to_string(i) + ".weight";
            l.bias.name = prefix + std::to_string(i) + ".bias";
          }
        },
        layers_[i]);
  }
}

void Sequential::set_trainable(bool trainable) {
  for (auto* p : parameters()) p->trainable = trainable;
}

void zero_grad(std::span<Parameter* const> params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace wsf::nn
