#include "wsf/nn/adam.hpp"

#include <cmath>

#include "wsf/common/error.hpp"

namespace wsf::nn {

AdamState make_adam_state(std::span<Parameter* const> params) {
  AdamState s;
  for (const auto* p : params) {
    s.first_moment.emplace_back(p->value.shape());
    s.second_moment.emplace_back(p->value.shape());
  }
  return s;
}

void adam_step(std::span<Parameter* const> params, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw DataError("adam_step: learning rate must be positive");
  if (params.size() != state.first_moment.size() || params.size() != state.second_moment.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters vs state for " +
                     std::to_string(state.first_moment.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    if (m.shape() != p.value.shape() || v.shape() != p.value.shape()) {
      throw ShapeError("adam_step: moment shape mismatch for '" + p.name + "'");
    }
    if (!p.trainable) continue;
    if (p.grad.shape() != p.value.shape()) {
      throw ShapeError("adam_step: gradient of '" + p.name + "' has shape " + shape_str(p.grad.shape()) +
                       ", expected " + shape_str(p.value.shape()));
    }
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    if (!p.value.all_finite()) throw NonFiniteError("adam_step: parameter '" + p.name + "' became non-finite");
  }
}

}  // namespace wsf::nn
