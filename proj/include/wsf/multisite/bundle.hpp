#pragma once

#include <span>
#include <string>
#include <vector>

namespace wsf::multisite {

enum class BundleSplit { Train, Val, Test };
std::string to_string(BundleSplit split);
BundleSplit bundle_split_from_string(const std::string& s);

// Per-example feature (h) and neural-mean-discrepancy (g) vectors from every expert in the
// roster, n_aug augmented passes per example. Carries no pixel data.
struct FeatureBundle {
  std::string site_id;
  BundleSplit split = BundleSplit::Train;
  std::vector<std::string> roster;
  std::size_t feature_size = 0;  // k
  std::size_t nmd_size = 0;      // p
  std::size_t n_aug = 0;
  std::size_t examples = 0;

  // One entry per row (rows = examples * n_aug), example-major.
  std::vector<int> labels;
  std::vector<int> aug_index;
  std::vector<int> patients;
  std::vector<double> features;  // rows x roster x k
  std::vector<double> nmd;       // rows x roster x p

  std::size_t rows() const noexcept { return labels.size(); }
  std::span<const double> h(std::size_t row, std::size_t expert) const {
    return {features.data() + (row * roster.size() + expert) * feature_size, feature_size};
  }
  std::span<const double> g(std::size_t row, std::size_t expert) const {
    return {nmd.data() + (row * roster.size() + expert) * nmd_size, nmd_size};
  }
  // Raises DataError if any array disagrees with the header.
  void validate() const;
};

// "EFB1" magic; header: site id, split, roster, k, p, n_aug, example and row counts;
// then fixed-stride little-endian f64 records [label, aug, patient, h..., g...].
std::string encode_bundle(const FeatureBundle& bundle);
FeatureBundle decode_bundle(std::string_view bytes);

}  // namespace wsf::multisite
