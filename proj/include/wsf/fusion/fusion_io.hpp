#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "wsf/fusion/fusion.hpp"

namespace wsf::fusion {

// EFW1 weights plus a JSON sidecar with the mode, expert slots and pooling map.
struct FusionBlob {
  std::string weights;
  std::string sidecar;
};

FusionBlob encode_fusion(const FusionModel& model);
FusionModel decode_fusion(std::string_view weights, std::string_view sidecar);

// fusion.efw and fusion.json under dir.
void save_fusion(const std::filesystem::path& dir, const FusionModel& model);
FusionModel load_fusion(const std::filesystem::path& dir);

}  // namespace wsf::fusion
