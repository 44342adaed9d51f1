#include <filesystem>
#include <set>

#include "doctest.h"
#include "wsf/common/binary_io.hpp"
#include "wsf/common/error.hpp"
#include "wsf/data/scenario.hpp"
#include "wsf/fusion/fusion_io.hpp"
#include "wsf/multisite/pipeline.hpp"
#include "wsf/nmd/nmd.hpp"

using namespace wsf;
using namespace wsf::multisite;
namespace fs = std::filesystem;

namespace {

PipelineConfig smoke_config() { return load_pipeline_config(fs::path(WSF_SOURCE_DIR) / "configs/smoke.json"); }

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

struct Sites {
  PipelineConfig cfg = smoke_config();
  data::MultiSiteCorpus corpus = data::generate_scenario(cfg.scenario, cfg.seed);
  data::SiteSplits split(const data::SiteDataset& s) const {
    return data::split_by_patient(s, cfg.scenario.split, cfg.seed);
  }
};

expert::TrainConfig short_training() {
  expert::TrainConfig c;
  c.epochs = 3;
  c.batch_size = 32;
  return c;
}

}  // namespace

TEST_CASE("feature bundle round trip") {
  FeatureBundle b;
  b.site_id = "inc2";
  b.split = BundleSplit::Val;
  b.roster = {"base", "inc1"};
  b.feature_size = 3;
  b.nmd_size = 2;
  b.n_aug = 2;
  b.examples = 2;
  b.labels = {4, 4, 7, 7};
  b.aug_index = {0, 1, 0, 1};
  b.patients = {1, 1, 2, 2};
  for (int i = 0; i < 4 * 2 * 3; ++i) b.features.push_back(0.1 * i - 1.0 / 3.0);
  for (int i = 0; i < 4 * 2 * 2; ++i) b.nmd.push_back(-0.7 * i + 1e-300);
  const std::string bytes = encode_bundle(b);
  CHECK(bytes.substr(0, 4) == "EFB1");
  auto back = decode_bundle(bytes);
  CHECK(encode_bundle(back) == bytes);
  CHECK(back.features == b.features);
  CHECK(back.nmd == b.nmd);
  CHECK(back.roster == b.roster);
  CHECK(back.split == BundleSplit::Val);
  CHECK(back.h(3, 1)[2] == b.features[(3 * 2 + 1) * 3 + 2]);
  CHECK_THROWS_AS(decode_bundle(bytes.substr(0, bytes.size() - 1)), DataError);
  b.labels.pop_back();
  CHECK_THROWS_AS(encode_bundle(b), DataError);
}

TEST_CASE("transfer log") {
  TransferLog log;
  log.append({1, "inc1", Direction::ToSite, PayloadKind::Model, 1234, 0.5});
  log.append({1, "inc1", Direction::FromSite, PayloadKind::Bundle, 99, 0.25});
  const std::string csv = log.csv();
  CHECK(csv.rfind("step,direction,kind,bytes,seconds,site\n", 0) == 0);
  auto back = TransferLog::from_csv(csv);
  REQUIRE(back.size() == 2);
  CHECK(back.records()[1].kind == PayloadKind::Bundle);
  CHECK(back.records()[1].site == "inc1");
  CHECK(back.csv() == csv);
  CHECK_THROWS_AS(TransferLog::from_csv("step,direction,kind,bytes,seconds,site\n1,to-site,images,5,0,x\n"), DataError);
}

TEST_CASE("site vault protocol") {
  Sites s;
  TransferLog log;
  SiteVault base(s.split(s.corpus.sites[0]), true, &log);
  auto inc_splits = s.split(s.corpus.sites[1]);
  const auto inc_test = inc_splits.test.examples;
  SiteVault inc(std::move(inc_splits), false, &log);
  SiteVault ext(s.split(s.corpus.externals[0]), false, &log);

  auto b = base.train_local_base("base", short_training(), 8);
  CHECK(log.size() == 0);
  CHECK_THROWS_AS(inc.train_local_base("x", short_training(), 8), ProtocolError);
  nmd::attach_reference_mean(b, s.split(s.corpus.sites[0]).train.examples);

  auto blob = inc.remote_finetune(expert::to_blob(b), "inc1", short_training(), 1);
  auto recs = log.records();
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].direction == Direction::ToSite);
  CHECK(recs[0].bytes == expert::to_blob(b).size_bytes());
  CHECK(recs[1].direction == Direction::FromSite);
  CHECK(recs[1].kind == PayloadKind::Model);
  CHECK(recs[1].bytes == blob.size_bytes());
  auto returned = expert::from_blob(blob);
  CHECK(expert::to_blob(returned).weights == blob.weights);
  CHECK(returned.reference_mean.has_value());
  CHECK_THROWS_AS(ext.remote_finetune(expert::to_blob(b), "ext", short_training(), 1), ProtocolError);

  std::vector<std::string> roster{"base", "inc1"};
  CHECK_THROWS_AS(inc.export_feature_bundle(BundleSplit::Train, roster, 5, 7, 1), DataError);
  inc.deliver(expert::to_blob(b), 1);
  CHECK(log.records().back().kind == PayloadKind::Model);
  auto bundle = inc.export_feature_bundle(BundleSplit::Train, roster, 5, 7, 1);
  CHECK(bundle.n_aug == 5);
  CHECK(bundle.rows() == 5 * inc.examples(BundleSplit::Train));
  CHECK(bundle.roster == roster);
  CHECK(bundle.features.size() == bundle.rows() * 2 * 8);
  CHECK(bundle.nmd.size() == bundle.rows() * 2 * bundle.nmd_size);
  for (std::size_t r = 0; r < bundle.rows(); ++r) CHECK(bundle.aug_index[r] == static_cast<int>(r % 5));
  CHECK(log.records().back().kind == PayloadKind::Bundle);
  CHECK(log.records().back().bytes == encode_bundle(bundle).size());
  CHECK(encode_bundle(inc.export_feature_bundle(BundleSplit::Train, roster, 5, 7, 1)) == encode_bundle(bundle));

  // Unaugmented single pass equals encoding the images directly.
  auto eval = inc.evaluation_bundle(BundleSplit::Test, roster);
  auto direct = nmd::run_expert(returned, inc_test.all());
  REQUIRE(eval.rows() == inc_test.size());
  for (std::size_t r = 0; r < eval.rows(); ++r) {
    auto h = eval.h(r, 1);
    for (std::size_t j = 0; j < h.size(); ++j) CHECK(h[j] == direct.features.at(r, j));
  }

  ext.install(b);
  CHECK_THROWS_AS(ext.export_feature_bundle(BundleSplit::Train, {"base"}, 1, 7, 1), ProtocolError);
  const std::size_t before = log.size();
  CHECK_NOTHROW(ext.evaluation_bundle(BundleSplit::Test, {"base"}));
  CHECK(log.size() == before);
  for (const auto& r : log.records()) CHECK(r.site != ext.site_id());
}

TEST_CASE("run lifecycle on the smoke scenario") {
  auto dir = fresh_dir("wsf_run_test");
  auto cfg = smoke_config();
  auto run = Run::create(dir, cfg);
  CHECK_THROWS_AS(Run::create(dir, cfg), DataError);
  CHECK_THROWS_AS(run.run_step(), ProtocolError);
  CHECK_THROWS_AS(run.train_fusion(fusion::FusionMode::SF), ProtocolError);
  run.train_base();
  CHECK_THROWS_AS(run.train_base(), ProtocolError);
  CHECK_THROWS_AS(run.train_fusion(fusion::FusionMode::SF), ProtocolError);
  run.run_step();
  CHECK(run.completed_steps() == 1);

  // Reopened runs pick up where they stopped.
  auto again = Run::open(dir);
  CHECK(again.completed_steps() == 1);
  CHECK(again.transfer_log().csv() == run.transfer_log().csv());
  again.run_step();
  again.run_step();
  CHECK_THROWS_AS(again.run_step(), ProtocolError);
  auto sf = again.train_fusion(fusion::FusionMode::SF);
  CHECK(fusion::encode_fusion(again.load_fusion(fusion::FusionMode::SF)).weights == fusion::encode_fusion(sf).weights);

  // Bundle files on disk round-trip bit-exactly.
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir / "bundles")) {
    if (entry.path().extension() != ".efb") continue;
    const std::string bytes = read_file(entry.path());
    CHECK(encode_bundle(decode_bundle(bytes)) == bytes);
    ++files;
  }
  CHECK(files == 2 * (2 + 3 + 4));

  // One expert out and one back per step; feature bundles only from remote sites.
  std::set<std::string> external;
  for (const auto& e : again.corpus().externals) external.insert(e.site_id);
  int models_back = 0, bundles_back = 0;
  for (const auto& r : again.transfer_log().records()) {
    CHECK(external.count(r.site) == 0);
    if (r.direction == Direction::FromSite) (r.kind == PayloadKind::Model ? models_back : bundles_back)++;
  }
  CHECK(models_back == 3);
  CHECK(bundles_back == 2 * (1 + 2 + 3));

  auto eval = again.evaluate(true);
  CHECK(fs::exists(dir / "metrics_internal.csv"));
  const auto& rows = eval.report.rows();
  CHECK(std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.method == "SF"; }));
  fs::remove_all(dir);
}

TEST_CASE("pipeline config") {
  auto cfg = smoke_config();
  nlohmann::json j = cfg;
  CHECK(j.get<PipelineConfig>().expert.epochs == cfg.expert.epochs);
  j["bogus"] = 1;
  CHECK_THROWS_AS(j.get<PipelineConfig>(), DataError);
  cfg.set_seed(11);
  CHECK(cfg.scenario.seed == 11);
  CHECK(cfg.expert.seed == 11);
  CHECK(cfg.fusion.seed == 11);
  cfg.n_aug = 0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
}
