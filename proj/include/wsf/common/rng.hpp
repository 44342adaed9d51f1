#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace wsf {

using Rng = std::mt19937_64;

// Mixes a base seed with a tag into an independent stream seed (splitmix64 over FNV-1a).
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index);

}  // namespace wsf
