#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "wsf/data/scenario.hpp"

namespace wsf::data {

// Versioned site file: "ESD1", site id, role, step, image dims, label subset, count,
// then per example u32 label, u32 patient, f64 pixels.
std::string encode_site(const SiteDataset& site);
SiteDataset decode_site(std::string_view bytes);

// Writes registry.json, scenario.json (config with seed echoed) and site_<id>.bin files.
void save_corpus(const std::filesystem::path& dir, const MultiSiteCorpus& corpus, const ScenarioConfig& config,
                 std::uint64_t seed);
MultiSiteCorpus load_corpus(const std::filesystem::path& dir);
ScenarioConfig load_scenario_config(const std::filesystem::path& dir);

// FNV-1a over all site payloads in corpus order; identical corpora give identical sums.
std::uint64_t corpus_checksum(const MultiSiteCorpus& corpus);

}  // namespace wsf::data
