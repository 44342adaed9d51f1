#include "wsf/data/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "wsf/common/error.hpp"

namespace wsf::data {

void ScenarioConfig::validate() const {
  if (image_size < 8) throw DataError("scenario: image_size must be >= 8");
  if (class_names.empty()) throw DataError("scenario: no classes");
  if (template_components < 1) throw DataError("scenario: template_components must be >= 1");
  const double total = split.train + split.val + split.test;
  if (split.train < 0 || split.val < 0 || split.test < 0 || std::abs(total - 1.0) > 1e-9) {
    throw DataError("scenario: split ratios must be non-negative and sum to 1");
  }
  std::set<std::string> names(class_names.begin(), class_names.end());
  if (names.size() != class_names.size()) throw DataError("scenario: duplicate class names");
  std::set<std::string> ids;
  int bases = 0;
  for (const auto& s : sites) {
    if (!ids.insert(s.id).second) throw DataError("scenario: duplicate site id '" + s.id + "'");
    if (s.role == SiteRole::Base) ++bases;
    if (s.classes.empty() || s.patients <= 0 || s.samples_per_patient <= 0) {
      throw DataError("scenario: site '" + s.id + "' is empty");
    }
    for (const auto& c : s.classes)
      if (!names.count(c)) throw DataError("scenario: site '" + s.id + "' uses class '" + c + "' not in registry");
    if (s.shift.max_translation < 0 || s.shift.noise < 0 || s.patient_offset_sd < 0) {
      throw DataError("scenario: site '" + s.id + "' has negative shift parameters");
    }
  }
  if (bases != 1) throw DataError("scenario: exactly one base site required, found " + std::to_string(bases));
  if (sites.front().role != SiteRole::Base) throw DataError("scenario: base site must come first");
}

ScenarioConfig default_scenario() {
  ScenarioConfig c;
  c.class_names = {"A2C",     "A3C",     "A4C",         "A5C",         "PLAX",
                   "PLAX-AV", "PSAX-AV", "PSAX-PM",     "RV",          "SC",
                   "SC-IVC",  "A2C-contrast", "A3C-contrast", "A4C-contrast", "PLAX-contrast"};
  const std::vector<std::string> base(c.class_names.begin(), c.class_names.begin() + 8);
  std::vector<std::string> inc2 = base;
  inc2.insert(inc2.end(), {"RV", "SC", "SC-IVC"});
  const std::vector<std::string> contrast(c.class_names.begin() + 11, c.class_names.end());

  c.sites = {
      {"base", SiteRole::Base, base, 50, 16, {1.00, 0.00, 0.06, 2}, 0.04},
      {"inc1", SiteRole::Incremental, {"A2C", "A4C"}, 20, 12, {0.60, 0.35, 0.10, 2}, 0.04},
      {"inc2", SiteRole::Incremental, inc2, 40, 14, {1.40, -0.30, 0.08, 2}, 0.04},
      {"inc3", SiteRole::Incremental, contrast, 30, 12, {0.70, 0.30, 0.07, 2}, 0.04},
      {"ext1", SiteRole::External, c.class_names, 20, 15, {0.80, 0.15, 0.09, 2}, 0.04},
      {"ext2", SiteRole::External, c.class_names, 20, 15, {1.20, -0.15, 0.07, 2}, 0.04},
  };
  return c;
}

void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  j = nlohmann::json::object();
  j["image_size"] = c.image_size;
  j["class_names"] = c.class_names;
  j["template_components"] = c.template_components;
  j["seed"] = c.seed;
  j["split"] = {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}};
  j["sites"] = nlohmann::json::array();
  for (const auto& s : c.sites) {
    j["sites"].push_back({{"id", s.id},
                          {"role", to_string(s.role)},
                          {"classes", s.classes},
                          {"patients", s.patients},
                          {"samples_per_patient", s.samples_per_patient},
                          {"patient_offset_sd", s.patient_offset_sd},
                          {"shift",
                           {{"gain", s.shift.gain},
                            {"bias", s.shift.bias},
                            {"noise", s.shift.noise},
                            {"max_translation", s.shift.max_translation}}}});
  }
}

void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  ScenarioConfig d = default_scenario();
  c.image_size = j.value("image_size", d.image_size);
  c.class_names = j.value("class_names", d.class_names);
  c.template_components = j.value("template_components", d.template_components);
  c.seed = j.value("seed", d.seed);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    c.split = {s.at("train").get<double>(), s.at("val").get<double>(), s.at("test").get<double>()};
  } else {
    c.split = d.split;
  }
  if (!j.contains("sites")) {
    c.sites = d.sites;
    return;
  }
  c.sites.clear();
  for (const auto& s : j.at("sites")) {
    SiteSpec spec;
    spec.id = s.at("id").get<std::string>();
    spec.role = site_role_from_string(s.at("role").get<std::string>());
    spec.classes = s.at("classes").get<std::vector<std::string>>();
    spec.patients = s.at("patients").get<int>();
    spec.samples_per_patient = s.at("samples_per_patient").get<int>();
    spec.patient_offset_sd = s.value("patient_offset_sd", 0.0);
    if (s.contains("shift")) {
      const auto& sh = s.at("shift");
      spec.shift = {sh.value("gain", 1.0), sh.value("bias", 0.0), sh.value("noise", 0.05),
                    sh.value("max_translation", 1)};
    }
    c.sites.push_back(std::move(spec));
  }
}

std::vector<double> class_template(std::size_t size, int components, std::uint64_t seed, int cls) {
  Rng rng(derive_seed(seed, "template", static_cast<std::uint64_t>(cls)));
  std::uniform_int_distribution<int> freq(0, 2);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  struct Wave {
    double a, u, v, phi;
  };
  std::vector<Wave> waves;
  double amp_sum = 0.0;
  for (int m = 0; m < components; ++m) {
    int u = 0, v = 0;
    while (u == 0 && v == 0) {
      u = freq(rng);
      v = freq(rng);
    }
    Wave wv{amp(rng), static_cast<double>(u), static_cast<double>(v), phase(rng)};
    amp_sum += wv.a;
    waves.push_back(wv);
  }
  std::vector<double> t(size * size);
  const double s = static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      double acc = 0.0;
      for (const auto& wv : waves) {
        acc += wv.a * std::cos(2.0 * std::numbers::pi * (wv.u * static_cast<double>(x) + wv.v * static_cast<double>(y)) / s +
                               wv.phi);
      }
      t[y * size + x] = 0.5 + 0.3 * acc / amp_sum;
    }
  }
  return t;
}

std::vector<double> translate(std::span<const double> img, std::size_t h, std::size_t w, int dy, int dx) {
  std::vector<double> out(h * w);
  const int hi = static_cast<int>(h), wi = static_cast<int>(w);
  for (int y = 0; y < hi; ++y) {
    const int sy = std::clamp(y - dy, 0, hi - 1);
    for (int x = 0; x < wi; ++x) {
      const int sx = std::clamp(x - dx, 0, wi - 1);
      out[static_cast<std::size_t>(y * wi + x)] = img[static_cast<std::size_t>(sy * wi + sx)];
    }
  }
  return out;
}

MultiSiteCorpus generate_scenario(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  MultiSiteCorpus corpus;
  corpus.registry = GlobalClassRegistry(config.class_names);
  const std::size_t n = config.image_size;

  std::vector<std::vector<double>> templates;
  for (std::size_t c = 0; c < corpus.registry.size(); ++c) {
    templates.push_back(class_template(n, config.template_components, seed, static_cast<int>(c)));
  }

  int step = 0;
  for (const auto& spec : config.sites) {
    SiteDataset site;
    site.site_id = spec.id;
    site.role = spec.role;
    site.step = spec.role == SiteRole::External ? -1 : step++;
    for (const auto& c : spec.classes) site.label_subset.push_back(corpus.registry.id(c));
    std::sort(site.label_subset.begin(), site.label_subset.end());
    site.label_subset.erase(std::unique(site.label_subset.begin(), site.label_subset.end()), site.label_subset.end());
    site.examples.height = n;
    site.examples.width = n;

    Rng rng(derive_seed(seed, "site:" + spec.id));
    std::normal_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> shift(-spec.shift.max_translation, spec.shift.max_translation);
    const std::size_t k = site.label_subset.size();
    std::vector<double> img(n * n);
    for (int p = 0; p < spec.patients; ++p) {
      const double offset = spec.patient_offset_sd * unit(rng);
      for (int j = 0; j < spec.samples_per_patient; ++j) {
        const int label = site.label_subset[static_cast<std::size_t>(j + p) % k];
        const int dy = shift(rng);
        const int dx = shift(rng);
        auto moved = translate(templates[static_cast<std::size_t>(label)], n, n, dy, dx);
        for (std::size_t i = 0; i < n * n; ++i) {
          const double noise = spec.shift.noise * unit(rng);
          const double v = spec.shift.gain * (moved[i] + offset + noise) + spec.shift.bias;
          img[i] = std::clamp(v, 0.0, 1.0);
        }
        site.examples.push_back(img, label, p);
      }
    }
    (spec.role == SiteRole::External ? corpus.externals : corpus.sites).push_back(std::move(site));
  }
  return corpus;
}

SiteSplits split_by_patient(const SiteDataset& dataset, const SplitRatios& ratios, std::uint64_t seed) {
  const double r[3] = {ratios.train, ratios.val, ratios.test};
  if (r[0] < 0 || r[1] < 0 || r[2] < 0 || std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
    throw DataError("split: ratios must be non-negative and sum to 1");
  }
  std::vector<int> patients(dataset.examples.patients);
  std::sort(patients.begin(), patients.end());
  patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
  const int total = static_cast<int>(patients.size());
  const int nonzero = (r[0] > 0) + (r[1] > 0) + (r[2] > 0);
  if (total < nonzero) {
    throw DataError("split: site '" + dataset.site_id + "' has " + std::to_string(total) + " patients for " +
                    std::to_string(nonzero) + " non-empty splits");
  }

  int counts[3];
  counts[0] = static_cast<int>(std::lround(r[0] * total));
  counts[1] = static_cast<int>(std::lround(r[1] * total));
  counts[1] = std::min(counts[1], total - counts[0]);
  counts[2] = total - counts[0] - counts[1];
  if (r[2] == 0.0 && counts[2] > 0) {
    counts[0] += counts[2];
    counts[2] = 0;
  }
  for (int s = 0; s < 3; ++s) {
    if (r[s] > 0.0 && counts[s] == 0) {
      const int donor = static_cast<int>(std::max_element(counts, counts + 3) - counts);
      --counts[donor];
      ++counts[s];
    }
  }

  Rng rng(derive_seed(seed, "split:" + dataset.site_id));
  std::shuffle(patients.begin(), patients.end(), rng);
  std::vector<int> which(static_cast<std::size_t>(*std::max_element(patients.begin(), patients.end()) + 1), -1);
  std::size_t pos = 0;
  for (int s = 0; s < 3; ++s)
    for (int i = 0; i < counts[s]; ++i) which[static_cast<std::size_t>(patients[pos++])] = s;

  SiteSplits out{dataset, dataset, dataset};
  std::vector<std::size_t> idx[3];
  for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
    idx[which[static_cast<std::size_t>(dataset.examples.patients[i])]].push_back(i);
  }
  out.train.examples = dataset.examples.subset(idx[0]);
  out.val.examples = dataset.examples.subset(idx[1]);
  out.test.examples = dataset.examples.subset(idx[2]);
  return out;
}

std::vector<double> augment(std::span<const double> img, std::size_t h, std::size_t w, Rng& rng,
                            const AugmentParams& params) {
  std::uniform_int_distribution<int> shift(-params.max_translation, params.max_translation);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int dy = shift(rng);
  const int dx = shift(rng);
  const double gain = 1.0 + params.gain_jitter * (2.0 * unit(rng) - 1.0);
  const double bias = params.bias_jitter * (2.0 * unit(rng) - 1.0);
  const double sd = params.max_noise * unit(rng);
  auto out = translate(img, h, w, dy, dx);
  for (double& v : out) {
    const double noise = sd * gauss(rng);
    v = std::clamp(gain * v + bias + noise, 0.0, 1.0);
  }
  return out;
}

}  // namespace wsf::data
