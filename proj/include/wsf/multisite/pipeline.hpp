#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsf/data/scenario.hpp"
#include "wsf/eval/metrics.hpp"
#include "wsf/expert/train.hpp"
#include "wsf/fusion/fusion.hpp"
#include "wsf/multisite/vault.hpp"

namespace wsf::multisite {

struct PipelineConfig {
  data::ScenarioConfig scenario = data::default_scenario();
  expert::TrainConfig expert;
  fusion::FusionTrainConfig fusion;
  std::size_t feature_size = 32;
  std::size_t n_aug = 5;
  std::vector<fusion::FusionMode> modes{fusion::FusionMode::SF, fusion::FusionMode::AttnWSF,
                                        fusion::FusionMode::NmdWSF};
  bool baselines = true;  // naive fine-tuning and the combine-&-retrain oracle
  std::uint64_t seed = 7;

  // Propagates seed into the scenario and both training configs.
  void set_seed(std::uint64_t s);
  void validate() const;
};
void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);
// Missing keys keep their defaults.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// Wall-clock seconds of every training-side stage.
struct StepTiming {
  int step = 0;
  double finetune = 0.0;
  double exports = 0.0;
  std::map<std::string, double> fusion;  // by mode name
  double oracle = 0.0;
};
struct TimingLog {
  double base = 0.0;
  std::vector<StepTiming> steps;  // steps[0] is the base step
  StepTiming& at(int step);
};
void to_json(nlohmann::json& j, const TimingLog& t);
void from_json(const nlohmann::json& j, TimingLog& t);

struct CumulativePoint {
  std::string method;
  int step = 0;
  double seconds = 0.0;
};
// Incremental pipeline per fusion mode (base + fine-tune + export + fusion) and the oracle.
std::vector<CumulativePoint> cumulative_training(const TimingLog& timing);

struct InferenceTiming {
  double single = 0.0;             // seconds per example, one expert
  double fusion_sequential = 0.0;  // all experts one after another, then fusion
  double fusion_parallel = 0.0;    // experts on separate threads, then fusion
  std::size_t experts = 0;
  std::size_t examples = 0;
};
void to_json(nlohmann::json& j, const InferenceTiming& t);
void from_json(const nlohmann::json& j, InferenceTiming& t);

// Attention weights of one fusion mode on one dataset.
struct AttentionRecord {
  std::string mode;
  std::string dataset;
  bool internal = true;
  nn::Tensor weights;  // [N, |d|]
};

struct Evaluation {
  eval::MetricsReport report;
  std::vector<AttentionRecord> attention;
};

// One incremental run rooted at a directory. Every stage persists its artifacts so a
// run can be driven one command at a time.
class Run {
 public:
  // Writes config.json and the corpus.
  static Run create(const std::filesystem::path& dir, const PipelineConfig& config);
  static Run open(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const noexcept { return dir_; }
  const PipelineConfig& config() const noexcept { return config_; }
  const data::MultiSiteCorpus& corpus() const noexcept { return corpus_; }
  const std::vector<expert::Expert>& experts() const noexcept { return experts_; }
  const TransferLog& transfer_log() const noexcept { return *log_; }
  const TimingLog& timing() const noexcept { return timing_; }
  int completed_steps() const noexcept { return static_cast<int>(experts_.size()) - 1; }
  int total_steps() const noexcept { return static_cast<int>(corpus_.sites.size()) - 1; }

  // Step 0: trains the base expert at the local site and exports base bundles.
  const expert::Expert& train_base();
  // Remote fine-tune on the next incremental site, roster delivery and bundle exports.
  const expert::Expert& run_step();
  // Trains fusion on the bundles of the latest step.
  fusion::FusionModel train_fusion(fusion::FusionMode mode);
  // Sequential naive fine-tuning across every completed step.
  expert::Classifier run_naive(expert::HeadMode mode);
  // Oracle retrained from scratch at every completed step that lacks one.
  expert::Classifier run_oracle();

  // Evaluates every available method on the internal test splits or external sites and
  // writes metrics_<split>.csv and attention_<split>.csv.
  Evaluation evaluate(bool internal);
  InferenceTiming measure_inference(int repeats = 3);

  std::vector<multisite::FeatureBundle> bundles(int step, BundleSplit split) const;
  fusion::FusionModel load_fusion(fusion::FusionMode mode) const;
  bool has_fusion(fusion::FusionMode mode) const;

 private:
  Run(std::filesystem::path dir, PipelineConfig config, data::MultiSiteCorpus corpus);
  void build_vaults();
  std::vector<std::string> roster() const;
  void export_bundles(int step);
  void save_state() const;

  std::filesystem::path dir_;
  PipelineConfig config_;
  data::MultiSiteCorpus corpus_;
  std::vector<data::SiteSplits> splits_;  // internal sites; held for the privileged oracle only
  std::vector<SiteVault> vaults_;         // internal sites in step order
  std::vector<SiteVault> external_vaults_;
  std::vector<expert::Expert> experts_;
  std::unique_ptr<TransferLog> log_;  // vaults keep a pointer to it
  TimingLog timing_;
};

// Runs every stage for all steps and writes metrics and reports.
struct PipelineResult {
  Evaluation internal;
  Evaluation external;
  InferenceTiming inference;
};
PipelineResult run_incremental_pipeline(const std::filesystem::path& dir, const PipelineConfig& config);

}  // namespace wsf::multisite
