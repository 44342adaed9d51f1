#include "wsf/multisite/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <sstream>
#include <thread>

#include "wsf/baselines/baselines.hpp"
#include "wsf/common/binary_io.hpp"
#include "wsf/common/error.hpp"
#include "wsf/data/corpus_io.hpp"
#include "wsf/expert/expert_io.hpp"
#include "wsf/fusion/fusion_io.hpp"
#include "wsf/nmd/nmd.hpp"

namespace wsf::multisite {

namespace fs = std::filesystem;
using fusion::FusionMode;

namespace {

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string mode_dir(FusionMode m) {
  switch (m) {
    case FusionMode::SF: return "sf";
    case FusionMode::AttnWSF: return "attn";
    case FusionMode::NmdWSF: return "nmd";
  }
  return "?";
}

std::string head_mode_name(expert::HeadMode m) { return m == expert::HeadMode::Constant ? "constant" : "expand"; }

std::string naive_method(expert::HeadMode m) {
  return m == expert::HeadMode::Constant ? "Fine-Tuning (Constant)" : "Fine-Tuning (Expand)";
}

const char* kOracle = "Combine & Retrain (oracle)";

fs::path bundle_path(const fs::path& dir, int step, const std::string& site, BundleSplit split) {
  return dir / "bundles" / ("step" + std::to_string(step)) / (site + "_" + to_string(split) + ".efb");
}

fs::path oracle_name(int step) { return "oracle_step" + std::to_string(step); }

nn::Tensor expert_features(const FeatureBundle& b, std::size_t e) {
  nn::Tensor t({b.rows(), b.feature_size});
  for (std::size_t r = 0; r < b.rows(); ++r) {
    const auto h = b.h(r, e);
    std::copy(h.begin(), h.end(), t.data() + r * b.feature_size);
  }
  return t;
}

}  // namespace

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  scenario.seed = s;
  expert.seed = s;
  fusion.seed = s;
}

void PipelineConfig::validate() const {
  scenario.validate();
  expert.validate();
  if (fusion.epochs <= 0 || fusion.batch_size == 0 || !(fusion.learning_rate > 0.0)) {
    throw DataError("config: fusion needs positive epochs, batch_size and learning_rate");
  }
  if (feature_size == 0) throw DataError("config: feature_size must be positive");
  if (n_aug == 0) throw DataError("config: n_aug must be positive");
  if (modes.empty()) throw DataError("config: at least one fusion mode is required");
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  std::vector<std::string> modes;
  for (auto m : c.modes) modes.push_back(mode_dir(m));
  j = {{"scenario", c.scenario},
       {"expert", c.expert},
       {"fusion",
        {{"epochs", c.fusion.epochs},
         {"batch_size", c.fusion.batch_size},
         {"learning_rate", c.fusion.learning_rate},
         {"seed", c.fusion.seed}}},
       {"feature_size", c.feature_size},
       {"n_aug", c.n_aug},
       {"modes", modes},
       {"baselines", c.baselines},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  static const std::vector<std::string> known{"scenario", "expert",  "fusion",    "feature_size",
                                              "n_aug",    "modes",   "baselines", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw DataError("config: unknown key '" + key + "'");
  }
  PipelineConfig d;
  c = d;
  if (j.contains("scenario")) c.scenario = j.at("scenario").get<data::ScenarioConfig>();
  if (j.contains("expert")) c.expert = j.at("expert").get<expert::TrainConfig>();
  if (j.contains("fusion")) {
    const auto& f = j.at("fusion");
    c.fusion.epochs = f.value("epochs", d.fusion.epochs);
    c.fusion.batch_size = f.value("batch_size", d.fusion.batch_size);
    c.fusion.learning_rate = f.value("learning_rate", d.fusion.learning_rate);
    c.fusion.seed = f.value("seed", d.fusion.seed);
  }
  c.feature_size = j.value("feature_size", d.feature_size);
  c.n_aug = j.value("n_aug", d.n_aug);
  if (j.contains("modes")) {
    c.modes.clear();
    for (const auto& m : j.at("modes")) c.modes.push_back(fusion::fusion_mode_from_string(m.get<std::string>()));
  }
  c.baselines = j.value("baselines", d.baselines);
  c.set_seed(j.value("seed", d.seed));
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("config " + path.string() + ": " + e.what());
  }
  try {
    return j.get<PipelineConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("config " + path.string() + ": " + e.what());
  }
}

StepTiming& TimingLog::at(int step) {
  while (static_cast<int>(steps.size()) <= step) steps.push_back(StepTiming{static_cast<int>(steps.size()), 0.0, 0.0, {}, 0.0});
  return steps[static_cast<std::size_t>(step)];
}

void to_json(nlohmann::json& j, const TimingLog& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.steps) {
    steps.push_back({{"step", s.step}, {"finetune", s.finetune}, {"exports", s.exports}, {"fusion", s.fusion},
                     {"oracle", s.oracle}});
  }
  j = {{"base", t.base}, {"steps", steps}};
}

void from_json(const nlohmann::json& j, TimingLog& t) {
  t.base = j.at("base").get<double>();
  t.steps.clear();
  for (const auto& s : j.at("steps")) {
    t.steps.push_back({s.at("step").get<int>(), s.at("finetune").get<double>(), s.at("exports").get<double>(),
                       s.at("fusion").get<std::map<std::string, double>>(), s.at("oracle").get<double>()});
  }
}

std::vector<CumulativePoint> cumulative_training(const TimingLog& timing) {
  std::vector<CumulativePoint> out;
  std::vector<std::string> modes;
  for (const auto& s : timing.steps)
    for (const auto& [m, sec] : s.fusion)
      if (std::find(modes.begin(), modes.end(), m) == modes.end()) modes.push_back(m);
  for (const auto& m : modes) {
    double total = timing.base;
    out.push_back({"pipeline " + m, 0, total});
    for (std::size_t s = 1; s < timing.steps.size(); ++s) {
      const auto& st = timing.steps[s];
      auto it = st.fusion.find(m);
      if (it == st.fusion.end()) break;
      total += st.finetune + st.exports + it->second;
      out.push_back({"pipeline " + m, st.step, total});
    }
  }
  double total = 0.0;
  for (const auto& st : timing.steps) {
    if (st.oracle <= 0.0) break;
    total += st.oracle;
    out.push_back({"oracle", st.step, total});
  }
  return out;
}

void to_json(nlohmann::json& j, const InferenceTiming& t) {
  j = {{"single", t.single},
       {"fusion_sequential", t.fusion_sequential},
       {"fusion_parallel", t.fusion_parallel},
       {"experts", t.experts},
       {"examples", t.examples}};
}

void from_json(const nlohmann::json& j, InferenceTiming& t) {
  t.single = j.at("single").get<double>();
  t.fusion_sequential = j.at("fusion_sequential").get<double>();
  t.fusion_parallel = j.at("fusion_parallel").get<double>();
  t.experts = j.at("experts").get<std::size_t>();
  t.examples = j.at("examples").get<std::size_t>();
}

Run::Run(fs::path dir, PipelineConfig config, data::MultiSiteCorpus corpus)
    : dir_(std::move(dir)),
      config_(std::move(config)),
      corpus_(std::move(corpus)),
      log_(std::make_unique<TransferLog>()) {
  build_vaults();
}

void Run::build_vaults() {
  for (std::size_t i = 0; i < corpus_.sites.size(); ++i) {
    splits_.push_back(data::split_by_patient(corpus_.sites[i], config_.scenario.split, config_.seed));
    vaults_.emplace_back(splits_.back(), i == 0, log_.get());
  }
  for (const auto& ext : corpus_.externals) {
    data::SiteSplits s;
    s.train = {ext.site_id, ext.role, ext.step, ext.label_subset, {}};
    s.val = s.train;
    s.test = ext;
    external_vaults_.emplace_back(std::move(s), false, log_.get());
  }
}

Run Run::create(const fs::path& dir, const PipelineConfig& config) {
  config.validate();
  if (fs::exists(dir) && !fs::is_empty(dir)) throw DataError("run directory " + dir.string() + " is not empty");
  auto corpus = data::generate_scenario(config.scenario, config.seed);
  data::save_corpus(dir / "corpus", corpus, config.scenario, config.seed);
  write_file(dir / "config.json", nlohmann::json(config).dump(2));
  Run run(dir, config, std::move(corpus));
  run.save_state();
  return run;
}

Run Run::open(const fs::path& dir) {
  if (!fs::exists(dir / "config.json")) throw DataError(dir.string() + " is not a run directory (no config.json)");
  auto config = load_pipeline_config(dir / "config.json");
  Run run(dir, config, data::load_corpus(dir / "corpus"));
  for (const auto& site : run.corpus_.sites) {
    if (!fs::exists(dir / "experts" / ("expert_" + site.site_id + ".json"))) break;
    run.experts_.push_back(expert::load_expert(dir / "experts", site.site_id));
  }
  const int done = run.completed_steps();
  for (int s = 0; s <= done; ++s)
    for (const auto& e : run.experts_) run.vaults_[static_cast<std::size_t>(s)].install(e);
  if (fs::exists(dir / "transfer_log.csv")) *run.log_ = TransferLog::from_csv(read_file(dir / "transfer_log.csv"));
  if (fs::exists(dir / "timing.json")) {
    run.timing_ = nlohmann::json::parse(read_file(dir / "timing.json")).get<TimingLog>();
  }
  return run;
}

void Run::save_state() const {
  log_->write_csv(dir_ / "transfer_log.csv");
  write_file(dir_ / "timing.json", nlohmann::json(timing_).dump(2));
}

std::vector<std::string> Run::roster() const {
  std::vector<std::string> ids;
  for (const auto& e : experts_) ids.push_back(e.id);
  return ids;
}

const expert::Expert& Run::train_base() {
  if (!experts_.empty()) throw ProtocolError("the base expert has already been trained");
  const auto t0 = Clock::now();
  auto e = vaults_[0].train_local_base(corpus_.sites[0].site_id, config_.expert, config_.feature_size);
  timing_.base = since(t0);
  timing_.at(0);
  expert::save_expert(dir_ / "experts", e);
  experts_.push_back(std::move(e));
  save_state();
  return experts_.back();
}

const expert::Expert& Run::run_step() {
  if (experts_.empty()) throw ProtocolError("train the base expert before running incremental steps");
  const int s = completed_steps() + 1;
  if (s > total_steps()) throw ProtocolError("all " + std::to_string(total_steps()) + " incremental steps are done");
  auto& site = vaults_[static_cast<std::size_t>(s)];

  auto t0 = Clock::now();
  const auto blob = site.remote_finetune(expert::to_blob(experts_[0]), site.site_id(), config_.expert, s);
  timing_.at(s).finetune = since(t0);
  auto e = expert::from_blob(blob);
  expert::save_expert(dir_ / "experts", e);

  // The new site needs every earlier expert; earlier sites need the new one.
  for (const auto& old : experts_) site.deliver(expert::to_blob(old), s);
  for (int j = 0; j < s; ++j) vaults_[static_cast<std::size_t>(j)].deliver(blob, s);
  experts_.push_back(std::move(e));

  export_bundles(s);
  save_state();
  return experts_.back();
}

void Run::export_bundles(int step) {
  const auto ids = roster();
  const auto t0 = Clock::now();
  for (int j = 0; j <= step; ++j) {
    auto& v = vaults_[static_cast<std::size_t>(j)];
    for (auto split : {BundleSplit::Train, BundleSplit::Val}) {
      const auto b = v.export_feature_bundle(split, ids, config_.n_aug, config_.seed, step);
      write_file(bundle_path(dir_, step, v.site_id(), split), encode_bundle(b));
    }
  }
  timing_.at(step).exports = since(t0);
}

std::vector<FeatureBundle> Run::bundles(int step, BundleSplit split) const {
  std::vector<FeatureBundle> out;
  for (int j = 0; j <= step; ++j) {
    const auto path = bundle_path(dir_, step, corpus_.sites[static_cast<std::size_t>(j)].site_id, split);
    if (!fs::exists(path)) throw DataError("missing feature bundle " + path.string());
    out.push_back(decode_bundle(read_file(path)));
  }
  return out;
}

fusion::FusionModel Run::train_fusion(FusionMode mode) {
  const int step = completed_steps();
  if (step < 1) throw ProtocolError("fusion needs at least one incremental step");
  const auto train = bundles(step, BundleSplit::Train);
  const auto val = bundles(step, BundleSplit::Val);
  expert::TrainLog log;
  auto model = fusion::train_fusion(train, val, experts_, mode, config_.fusion, &log);
  timing_.at(step).fusion[fusion::to_string(mode)] = log.seconds;
  const auto out = dir_ / "fusion" / mode_dir(mode);
  fusion::save_fusion(out, model);
  nlohmann::json j = log;
  j["step"] = step;
  write_file(out / "train_log.json", j.dump(2));
  save_state();
  return model;
}

bool Run::has_fusion(FusionMode mode) const {
  return fs::exists(dir_ / "fusion" / mode_dir(mode) / "fusion.json");
}

fusion::FusionModel Run::load_fusion(FusionMode mode) const {
  auto model = fusion::load_fusion(dir_ / "fusion" / mode_dir(mode));
  std::vector<std::string> ids;
  for (const auto& e : model.experts()) ids.push_back(e.id);
  if (ids != roster()) {
    throw ProtocolError(fusion::to_string(mode) + " was trained on an older roster; retrain it after the last step");
  }
  return model;
}

expert::Classifier Run::run_naive(expert::HeadMode mode) {
  if (experts_.empty()) throw ProtocolError("train the base expert first");
  expert::Classifier model = experts_[0].model;
  for (int s = 1; s <= completed_steps(); ++s) {
    model = vaults_[static_cast<std::size_t>(s)].naive_finetune(model, mode, config_.expert, s);
  }
  expert::save_classifier(dir_ / "baselines", "finetune_" + head_mode_name(mode), model);
  save_state();
  return model;
}

expert::Classifier Run::run_oracle() {
  if (experts_.empty()) throw ProtocolError("train the base expert first");
  expert::Classifier last;
  for (int s = 0; s <= completed_steps(); ++s) {
    const auto name = oracle_name(s).string();
    if (fs::exists(dir_ / "baselines" / (name + ".json")) && timing_.at(s).oracle > 0.0) {
      last = expert::load_classifier(dir_ / "baselines", name);
      continue;
    }
    if (s == 0) {
      // With only the base data pooled, retraining is exactly base training.
      last = experts_[0].model;
      timing_.at(0).oracle = timing_.base;
    } else {
      std::vector<baselines::PooledSite> pooled;
      for (int j = 0; j <= s; ++j) {
        const auto& sp = splits_[static_cast<std::size_t>(j)];
        pooled.push_back({&sp.train.examples, &sp.val.examples, sp.train.label_subset});
      }
      expert::TrainLog log;
      last = baselines::combine_retrain(pooled, config_.expert, config_.feature_size, &log);
      timing_.at(s).oracle = log.seconds;
    }
    expert::save_classifier(dir_ / "baselines", name, last);
    save_state();
  }
  return last;
}

Evaluation Run::evaluate(bool internal) {
  if (experts_.empty()) throw ProtocolError("nothing to evaluate before the base expert is trained");
  const auto ids = roster();
  std::vector<SiteVault*> sites;
  if (internal) {
    for (int s = 0; s <= completed_steps(); ++s) sites.push_back(&vaults_[static_cast<std::size_t>(s)]);
  } else {
    for (auto& v : external_vaults_) {
      for (const auto& e : experts_) v.install(e);
      sites.push_back(&v);
    }
  }

  struct Result {
    std::string method;
    int experts;
    eval::Transfer transfer;
    std::string dataset;
    std::vector<int> labels, preds;
  };
  std::vector<Result> results;
  Evaluation out;

  std::vector<std::pair<FusionMode, fusion::FusionModel>> fusions;
  for (auto m : {FusionMode::SF, FusionMode::AttnWSF, FusionMode::NmdWSF})
    if (has_fusion(m)) fusions.emplace_back(m, load_fusion(m));

  std::optional<expert::Classifier> naive_constant, naive_expand, oracle;
  if (fs::exists(dir_ / "baselines" / "finetune_constant.json"))
    naive_constant = expert::load_classifier(dir_ / "baselines", "finetune_constant");
  if (fs::exists(dir_ / "baselines" / "finetune_expand.json"))
    naive_expand = expert::load_classifier(dir_ / "baselines", "finetune_expand");
  const auto oracle_file = oracle_name(completed_steps()).string();
  if (fs::exists(dir_ / "baselines" / (oracle_file + ".json")))
    oracle = expert::load_classifier(dir_ / "baselines", oracle_file);

  const int d = static_cast<int>(experts_.size());
  for (auto* site : sites) {
    const auto bundle = site->evaluation_bundle(BundleSplit::Test, ids);
    const auto& labels = bundle.labels;
    const std::string ds = site->site_id();

    if (naive_constant)
      results.push_back({naive_method(expert::HeadMode::Constant), 1, eval::Transfer::None, ds, labels,
                         site->predict_at_site(BundleSplit::Test, *naive_constant)});
    if (naive_expand)
      results.push_back({naive_method(expert::HeadMode::Expand), 1, eval::Transfer::None, ds, labels,
                         site->predict_at_site(BundleSplit::Test, *naive_expand)});

    std::vector<baselines::ExpertScores> scores;
    for (std::size_t e = 0; e < experts_.size(); ++e) {
      scores.push_back(baselines::own_head_scores(experts_[e], expert_features(bundle, e)));
      const auto& sc = scores.back();
      std::vector<int> preds(labels.size());
      const std::size_t m = sc.label_set.size();
      for (std::size_t i = 0; i < labels.size(); ++i)
        preds[i] = sc.label_set[expert::argmax(sc.logits.values().subspan(i * m, m))];
      results.push_back({"Single Expert (" + experts_[e].id + ")", 1, eval::Transfer::None, ds, labels, preds});
    }
    for (auto k : {baselines::BaselineKind::MaxLogit, baselines::BaselineKind::MSP,
                   baselines::BaselineKind::ConfidenceRouting}) {
      results.push_back({baselines::to_string(k), d, eval::Transfer::None, ds, labels,
                         baselines::confidence_predict(k, scores)});
    }
    for (const auto& [mode, model] : fusions) {
      const std::vector<FeatureBundle> one{bundle};
      const auto pred = fusion::predict(model, fusion::collect_rows(model, one).all());
      results.push_back({fusion::to_string(mode), d, eval::Transfer::Features, ds, labels, pred.classes});
      if (model.weighted()) out.attention.push_back({fusion::to_string(mode), ds, internal, pred.attention});
    }
    if (oracle)
      results.push_back({kOracle, 1, eval::Transfer::Images, ds, labels, site->predict_at_site(BundleSplit::Test, *oracle)});
  }

  // Rows grouped by method, in first-seen order.
  std::vector<std::string> order;
  for (const auto& r : results)
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
  for (const auto& m : order)
    for (const auto& r : results)
      if (r.method == m) out.report.add(r.method, r.experts, r.transfer, r.dataset, r.labels, r.preds);

  const std::string split = internal ? "internal" : "external";
  write_file(dir_ / ("metrics_" + split + ".csv"), out.report.csv());

  std::ostringstream att;
  att << "mode,dataset,row";
  for (const auto& id : ids) att << ',' << id;
  att << '\n';
  char buf[32];
  for (const auto& a : out.attention) {
    const std::size_t n = a.weights.dim(0), w = a.weights.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      att << a.mode << ',' << a.dataset << ',' << i;
      for (std::size_t e = 0; e < w; ++e) {
        std::snprintf(buf, sizeof buf, ",%.17g", a.weights.at(i, e));
        att << buf;
      }
      att << '\n';
    }
  }
  write_file(dir_ / ("attention_" + split + ".csv"), att.str());
  return out;
}

InferenceTiming Run::measure_inference(int repeats) {
  if (experts_.empty()) throw ProtocolError("no experts to time");
  std::optional<fusion::FusionModel> model;
  for (auto m : {FusionMode::NmdWSF, FusionMode::AttnWSF, FusionMode::SF})
    if (!model && has_fusion(m)) model = load_fusion(m);
  if (!model) throw ProtocolError("train a fusion model before timing inference");

  // The base site is local, so its test images are available here.
  const auto& images = splits_[0].test.examples;
  if (images.size() == 0) throw DataError("the base site has no test images to time");
  const std::size_t n = images.size(), d = experts_.size();
  std::vector<nn::Tensor> singles;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx[] = {i};
    singles.push_back(images.batch(idx));
  }

  auto fuse_one = [&](const nn::Tensor& x, bool parallel) {
    std::vector<nmd::ExpertOutputs> outs(d);
    if (parallel) {
      std::vector<std::jthread> workers;
      for (std::size_t e = 0; e < d; ++e) workers.emplace_back([&, e] { outs[e] = nmd::run_expert(experts_[e], x); });
    } else {
      for (std::size_t e = 0; e < d; ++e) outs[e] = nmd::run_expert(experts_[e], x);
    }
    fusion::FusionBatch b;
    for (auto& o : outs) {
      b.features.push_back(std::move(o.features));
      b.nmd.push_back(std::move(o.nmd));
    }
    return fusion::predict(*model, b).classes[0];
  };

  InferenceTiming t;
  t.experts = d;
  t.examples = n;
  const double count = static_cast<double>(n) * repeats;
  volatile int sink = 0;
  auto t0 = Clock::now();
  for (int r = 0; r < repeats; ++r)
    for (const auto& x : singles) {
      const auto& m = experts_[0].model;
      nn::Graph g(false);
      sink = sink + static_cast<int>(expert::argmax(g.value(m.head.forward(g, m.encoder.forward(g, g.constant_ref(x)))).values()));
    }
  t.single = since(t0) / count;
  t0 = Clock::now();
  for (int r = 0; r < repeats; ++r)
    for (const auto& x : singles) sink = sink + fuse_one(x, false);
  t.fusion_sequential = since(t0) / count;
  t0 = Clock::now();
  for (int r = 0; r < repeats; ++r)
    for (const auto& x : singles) sink = sink + fuse_one(x, true);
  t.fusion_parallel = since(t0) / count;
  write_file(dir_ / "inference.json", nlohmann::json(t).dump(2));
  return t;
}

PipelineResult run_incremental_pipeline(const fs::path& dir, const PipelineConfig& config) {
  Run run = Run::create(dir, config);
  auto stage = [](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const TrainingDivergence& e) {
      throw TrainingDivergence(std::string(name) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(std::string(name) + ": " + e.what());
    } catch (const ProtocolError& e) {
      throw ProtocolError(std::string(name) + ": " + e.what());
    }
  };
  stage("base training", [&] { run.train_base(); });
  for (int s = 1; s <= run.total_steps(); ++s) {
    stage("remote fine-tuning", [&] { run.run_step(); });
    for (auto m : config.modes) stage("fusion training", [&] { run.train_fusion(m); });
  }
  if (config.baselines) {
    stage("combine-and-retrain", [&] { run.run_oracle(); });
    stage("naive fine-tuning", [&] {
      run.run_naive(expert::HeadMode::Constant);
      run.run_naive(expert::HeadMode::Expand);
    });
  }
  PipelineResult result;
  stage("evaluation", [&] {
    result.internal = run.evaluate(true);
    result.external = run.evaluate(false);
  });
  stage("inference timing", [&] { result.inference = run.measure_inference(); });
  return result;
}

}  // namespace wsf::multisite
