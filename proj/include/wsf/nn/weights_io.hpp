#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wsf/nn/tensor.hpp"

namespace wsf::nn {

struct NamedTensor {
  std::string name;
  Tensor value;
};

// "EFW1" magic, u32 count, then per parameter: u32 name length, name bytes,
// u32 rank, u64 dims, little-endian f64 payload.
std::string encode_weights(std::span<const Parameter* const> params);
std::vector<NamedTensor> decode_weights(std::string_view bytes);

// Copies decoded tensors into params by position, checking names and shapes.
void assign_weights(std::span<Parameter* const> params, const std::vector<NamedTensor>& tensors);

}  // namespace wsf::nn
