#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "wsf/nn/tensor.hpp"

namespace wsf::data {

// Canonical ordered class list; ids are dense 0..G-1 and never change once built.
class GlobalClassRegistry {
 public:
  GlobalClassRegistry() = default;
  explicit GlobalClassRegistry(std::vector<std::string> names);

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  // Raises DataError for unknown names.
  int id(const std::string& name) const;
  bool contains(const std::string& name) const { return ids_.count(name) != 0; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> ids_;
};

// Single-channel images stored contiguously, one row per example.
struct ImageSet {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;
  std::vector<int> labels;    // global class ids
  std::vector<int> patients;  // patient ids, unique per site

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t pixels_per_image() const noexcept { return height * width; }
  std::span<const double> image(std::size_t i) const {
    return {pixels.data() + i * pixels_per_image(), pixels_per_image()};
  }
  void push_back(std::span<const double> img, int label, int patient);
  // Stacks the selected examples into an [n,1,H,W] tensor.
  nn::Tensor batch(std::span<const std::size_t> indices) const;
  nn::Tensor all() const;
  ImageSet subset(std::span<const std::size_t> indices) const;
};

enum class SiteRole { Base, Incremental, External };
std::string to_string(SiteRole role);
SiteRole site_role_from_string(const std::string& s);

struct SiteDataset {
  std::string site_id;
  SiteRole role = SiteRole::Base;
  int step = 0;                  // 0 for base, 1..t for incremental, -1 for external
  std::vector<int> label_subset;  // sorted global ids
  ImageSet examples;
};

// Internal sites in incremental order (base first), then external held-out sites.
struct MultiSiteCorpus {
  GlobalClassRegistry registry;
  std::vector<SiteDataset> sites;
  std::vector<SiteDataset> externals;

  const SiteDataset& site(const std::string& id) const;
};

// Patient-level partition of one site.
struct SiteSplits {
  SiteDataset train;
  SiteDataset val;
  SiteDataset test;
};

}  // namespace wsf::data
