// Measured properties of the default scenario, read from the acceptance run.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include "doctest.h"
#include "wsf/common/binary_io.hpp"
#include "wsf/eval/reports.hpp"
#include "wsf/expert/expert_io.hpp"
#include "wsf/multisite/pipeline.hpp"
#include "wsf/nmd/nmd.hpp"

namespace fs = std::filesystem;
using namespace wsf;

namespace {

const fs::path run_dir = fs::path(WSF_ACCEPTANCE_DIR) / "run_a";

const multisite::Run& run() {
  static const multisite::Run r = multisite::Run::open(run_dir);
  return r;
}

data::ImageSet test_split(const std::string& site) {
  const auto& cfg = run().config();
  return data::split_by_patient(run().corpus().site(site), cfg.scenario.split, cfg.seed).test.examples;
}

double mean_norm(const nn::Tensor& g) {
  const std::size_t n = g.dim(0), p = g.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < p; ++j) s += g.at(i, j) * g.at(i, j);
    total += std::sqrt(s);
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("every expert is accurate on its own test split") {
  const auto m = eval::MetricsReport::from_csv(read_file(run_dir / "metrics_internal.csv"));
  for (const auto& e : run().experts()) {
    const double acc = m.find("Single Expert (" + e.id + ")", e.id).acc;
    INFO(e.id << " " << acc);
    CHECK(acc > 85.0);
  }
}

TEST_CASE("neural mean discrepancy separates in- from out-of-distribution") {
  // base and inc3 share no classes.
  const auto& experts = run().experts();
  const auto& base = experts.front();
  const auto& contrast = experts.back();
  const auto base_test = test_split(base.id), contrast_test = test_split(contrast.id);
  CHECK(mean_norm(nmd::run_expert(base, base_test.all()).nmd) <
        mean_norm(nmd::run_expert(base, contrast_test.all()).nmd));
  CHECK(mean_norm(nmd::run_expert(contrast, contrast_test.all()).nmd) <
        mean_norm(nmd::run_expert(contrast, base_test.all()).nmd));
}

TEST_CASE("oracle covers the union of label sets") {
  const auto oracle = expert::load_classifier(run_dir / "baselines", "oracle_step" + std::to_string(run().completed_steps()));
  CHECK(oracle.classes.size() == 15);
  CHECK(oracle.head.out_features() == 15);
}

TEST_CASE("metrics CSV contract") {
  for (const char* split : {"internal", "external"}) {
    std::istringstream in(read_file(run_dir / (std::string("metrics_") + split + ".csv")));
    std::string line;
    std::getline(in, line);
    CHECK(line == "method,experts,transfer,dataset,acc,f1");
    std::map<std::string, std::vector<double>> acc;
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
      REQUIRE(f.size() == 6);
      if (f[3] == "Average") {
        const auto& v = acc[f[0]];
        double mean = 0.0;
        for (double x : v) mean += x / static_cast<double>(v.size());
        CHECK(std::abs(std::stod(f[4]) - mean) < 0.05);
      } else {
        acc[f[0]].push_back(std::stod(f[4]));
      }
    }
    for (const char* method : {"SF", "attn-wSF", "nmd-wSF", "Max Logit", "MSP", "Confidence Routing",
                               "Combine & Retrain (oracle)", "Fine-Tuning (Constant)", "Fine-Tuning (Expand)"})
      CHECK(acc.count(method) == 1);
  }
}

TEST_CASE("attention histogram totals equal test-set sizes") {
  std::istringstream in(read_file(run_dir / "attention_hist.csv"));
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::size_t> totals;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
    totals[f[0] + "|" + f[1] + "|" + f[2]] += std::stoul(f[5]);
  }
  REQUIRE_FALSE(totals.empty());
  std::map<std::string, std::size_t> sizes;
  for (const auto& s : run().corpus().sites) sizes[s.site_id] = test_split(s.site_id).size();
  for (const auto& s : run().corpus().externals) sizes[s.site_id] = s.examples.size();
  for (const auto& [key, n] : totals) {
    const auto dataset = key.substr(key.find('|') + 1, key.rfind('|') - key.find('|') - 1);
    INFO(key);
    CHECK(n == sizes.at(dataset));
  }
}

TEST_CASE("timing trends") {
  const auto& t = run().timing();
  // Oracle retraining grows with the pooled data; the incremental step cost does not.
  for (int s = 2; s <= run().completed_steps(); ++s) {
    const auto& st = t.steps.at(static_cast<std::size_t>(s));
    CHECK(st.oracle > t.steps.at(static_cast<std::size_t>(s - 1)).oracle);
    double fusion = 0.0;
    for (const auto& [mode, secs] : st.fusion) fusion = std::max(fusion, secs);
    CHECK(st.finetune + st.exports + fusion < st.oracle);
  }
  const auto inf = nlohmann::json::parse(read_file(run_dir / "inference.json")).get<multisite::InferenceTiming>();
  CHECK(inf.fusion_sequential > inf.single);
  CHECK(inf.experts == run().experts().size());
}

TEST_CASE("no training command reads an external site") {
  for (const auto& r : run().transfer_log().records())
    for (const auto& e : run().corpus().externals) CHECK(r.site != e.site_id);
}
