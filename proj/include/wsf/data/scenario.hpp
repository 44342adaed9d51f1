#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsf/common/rng.hpp"
#include "wsf/data/dataset.hpp"

namespace wsf::data {

// Per-site acquisition shift applied on top of the class template.
struct SiteShift {
  double gain = 1.0;
  double bias = 0.0;
  double noise = 0.05;
  int max_translation = 1;
};

struct SiteSpec {
  std::string id;
  SiteRole role = SiteRole::Incremental;
  std::vector<std::string> classes;
  int patients = 10;
  int samples_per_patient = 10;
  SiteShift shift;
  double patient_offset_sd = 0.0;
};

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct ScenarioConfig {
  std::size_t image_size = 16;
  std::vector<std::string> class_names;
  std::vector<SiteSpec> sites;  // base, incremental steps in order, externals anywhere after
  SplitRatios split;
  int template_components = 4;
  std::uint64_t seed = 7;

  // Raises DataError describing the first violated constraint.
  void validate() const;
};

// 15 classes; base (8 classes), three incremental steps (2 overlapping, 11 mixed,
// 4 disjoint) and two external sites covering everything.
ScenarioConfig default_scenario();

void to_json(nlohmann::json& j, const ScenarioConfig& c);
void from_json(const nlohmann::json& j, ScenarioConfig& c);

// Seeded smooth template for class `cls` with values in [0.2, 0.8].
std::vector<double> class_template(std::size_t size, int components, std::uint64_t seed, int cls);

// Integer translation with edge replication.
std::vector<double> translate(std::span<const double> img, std::size_t h, std::size_t w, int dy, int dx);

MultiSiteCorpus generate_scenario(const ScenarioConfig& config, std::uint64_t seed);

// Partitions by patient id. Counts per split are rounded from the ratios; a split with
// a non-zero ratio is never left empty. Zero-ratio splits are empty.
SiteSplits split_by_patient(const SiteDataset& dataset, const SplitRatios& ratios, std::uint64_t seed);

struct AugmentParams {
  int max_translation = 1;
  double gain_jitter = 0.1;   // gain in [1-g, 1+g]
  double bias_jitter = 0.05;  // bias in [-b, b]
  double max_noise = 0.02;    // noise sd drawn from [0, max_noise]

  static AugmentParams identity() { return {0, 0.0, 0.0, 0.0}; }
};

// Random translation, intensity jitter and gaussian noise, clipped to [0,1].
std::vector<double> augment(std::span<const double> img, std::size_t h, std::size_t w, Rng& rng,
                            const AugmentParams& params = {});

}  // namespace wsf::data
