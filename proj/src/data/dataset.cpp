#include "wsf/data/dataset.hpp"

#include <algorithm>

#include "wsf/common/error.hpp"

namespace wsf::data {

GlobalClassRegistry::GlobalClassRegistry(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!ids_.emplace(names_[i], static_cast<int>(i)).second) {
      throw DataError("class registry: duplicate class name '" + names_[i] + "'");
    }
  }
}

int GlobalClassRegistry::id(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) throw DataError("class registry: unknown class '" + name + "'");
  return it->second;
}

void ImageSet::push_back(std::span<const double> img, int label, int patient) {
  if (img.size() != pixels_per_image()) {
    throw DataError("image set: image of " + std::to_string(img.size()) + " pixels, expected " +
                    std::to_string(pixels_per_image()));
  }
  pixels.insert(pixels.end(), img.begin(), img.end());
  labels.push_back(label);
  patients.push_back(patient);
}

nn::Tensor ImageSet::batch(std::span<const std::size_t> indices) const {
  const std::size_t ppi = pixels_per_image();
  nn::Tensor t({indices.size(), 1, height, width});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto img = image(indices[i]);
    std::copy(img.begin(), img.end(), t.data() + i * ppi);
  }
  return t;
}

nn::Tensor ImageSet::all() const {
  return nn::Tensor({size(), 1, height, width}, pixels);
}

ImageSet ImageSet::subset(std::span<const std::size_t> indices) const {
  ImageSet out;
  out.height = height;
  out.width = width;
  for (auto i : indices) out.push_back(image(i), labels[i], patients[i]);
  return out;
}

std::string to_string(SiteRole role) {
  switch (role) {
    case SiteRole::Base: return "base";
    case SiteRole::Incremental: return "incremental";
    case SiteRole::External: return "external";
  }
  return "?";
}

SiteRole site_role_from_string(const std::string& s) {
  if (s == "base") return SiteRole::Base;
  if (s == "incremental") return SiteRole::Incremental;
  if (s == "external") return SiteRole::External;
  throw DataError("unknown site role '" + s + "'");
}

const SiteDataset& MultiSiteCorpus::site(const std::string& id) const {
  for (const auto* group : {&sites, &externals})
    for (const auto& s : *group)
      if (s.site_id == id) return s;
  throw DataError("corpus has no site '" + id + "'");
}

}  // namespace wsf::data
