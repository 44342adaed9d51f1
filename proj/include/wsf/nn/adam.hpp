#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "wsf/nn/tensor.hpp"

namespace wsf::nn {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

// Zero moments shaped like params.
AdamState make_adam_state(std::span<Parameter* const> params);

// One bias-corrected Adam update from each parameter's accumulated grad. Frozen
// (non-trainable) parameters are left untouched; the step counter always advances.
void adam_step(std::span<Parameter* const> params, AdamState& state, double lr);

}  // namespace wsf::nn
