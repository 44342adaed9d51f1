#pragma once

#include <filesystem>
#include <string>

#include "wsf/expert/train.hpp"

namespace wsf::expert {

// Serialized expert as it travels between sites: EFW1 weights plus JSON sidecar
// (id, label set, k, p, reference mean, training log).
struct ModelBlob {
  std::string weights;
  std::string sidecar;

  std::size_t size_bytes() const noexcept { return weights.size() + sidecar.size(); }
};

ModelBlob to_blob(const Expert& expert);
Expert from_blob(const ModelBlob& blob);

// expert_<id>.efw and expert_<id>.json under dir.
void save_expert(const std::filesystem::path& dir, const Expert& expert);
Expert load_expert(const std::filesystem::path& dir, const std::string& id);

// Standalone classifiers (naive fine-tuning, combined retraining) use the same pair of files.
void save_classifier(const std::filesystem::path& dir, const std::string& name, const Classifier& model);
Classifier load_classifier(const std::filesystem::path& dir, const std::string& name);

}  // namespace wsf::expert
