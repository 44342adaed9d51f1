#include "wsf/data/corpus_io.hpp"

#include <fstream>

#include "wsf/common/binary_io.hpp"
#include "wsf/common/error.hpp"

namespace wsf::data {

namespace fs = std::filesystem;

std::string encode_site(const SiteDataset& site) {
  BinaryWriter w;
  w.magic("ESD1");
  w.str(site.site_id);
  w.str(to_string(site.role));
  w.i32(site.step);
  w.u32(static_cast<std::uint32_t>(site.examples.height));
  w.u32(static_cast<std::uint32_t>(site.examples.width));
  w.u32(static_cast<std::uint32_t>(site.label_subset.size()));
  for (int l : site.label_subset) w.u32(static_cast<std::uint32_t>(l));
  w.u64(site.examples.size());
  for (std::size_t i = 0; i < site.examples.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(site.examples.labels[i]));
    w.u32(static_cast<std::uint32_t>(site.examples.patients[i]));
    w.f64s(site.examples.image(i));
  }
  return std::move(w).bytes();
}

SiteDataset decode_site(std::string_view bytes) {
  BinaryReader r(bytes);
  r.expect_magic("ESD1");
  SiteDataset s;
  s.site_id = r.str();
  s.role = site_role_from_string(r.str());
  s.step = r.i32();
  s.examples.height = r.u32();
  s.examples.width = r.u32();
  const auto nl = r.u32();
  for (std::uint32_t i = 0; i < nl; ++i) s.label_subset.push_back(static_cast<int>(r.u32()));
  const auto count = r.u64();
  const std::size_t ppi = s.examples.pixels_per_image();
  if (count * (8 + ppi * 8) > r.remaining()) throw DataError("site file: truncated example payload");
  std::vector<double> img(ppi);
  for (std::uint64_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(r.u32());
    const int patient = static_cast<int>(r.u32());
    r.f64s(img);
    s.examples.push_back(img, label, patient);
  }
  if (!r.at_end()) throw DataError("site file: trailing bytes");
  return s;
}

void save_corpus(const fs::path& dir, const MultiSiteCorpus& corpus, const ScenarioConfig& config,
                 std::uint64_t seed) {
  fs::create_directories(dir);
  nlohmann::json reg = {{"classes", corpus.registry.names()}};
  write_file(dir / "registry.json", reg.dump(2));
  ScenarioConfig echoed = config;
  echoed.seed = seed;
  nlohmann::json sc;
  to_json(sc, echoed);
  write_file(dir / "scenario.json", sc.dump(2));
  for (const auto* group : {&corpus.sites, &corpus.externals})
    for (const auto& s : *group) write_file(dir / ("site_" + s.site_id + ".bin"), encode_site(s));
}

ScenarioConfig load_scenario_config(const fs::path& dir) {
  ScenarioConfig c;
  from_json(nlohmann::json::parse(read_file(dir / "scenario.json")), c);
  return c;
}

MultiSiteCorpus load_corpus(const fs::path& dir) {
  const auto config = load_scenario_config(dir);
  const auto reg = nlohmann::json::parse(read_file(dir / "registry.json"));
  MultiSiteCorpus corpus;
  corpus.registry = GlobalClassRegistry(reg.at("classes").get<std::vector<std::string>>());
  for (const auto& spec : config.sites) {
    auto site = decode_site(read_file(dir / ("site_" + spec.id + ".bin")));
    (site.role == SiteRole::External ? corpus.externals : corpus.sites).push_back(std::move(site));
  }
  return corpus;
}

std::uint64_t corpus_checksum(const MultiSiteCorpus& corpus) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* group : {&corpus.sites, &corpus.externals}) {
    for (const auto& s : *group) {
      for (unsigned char c : encode_site(s)) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace wsf::data
