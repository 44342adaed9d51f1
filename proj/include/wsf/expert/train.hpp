#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsf/expert/classifier.hpp"

namespace wsf::expert {

struct TrainConfig {
  int epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 7;

  void validate() const;
};

// Per-epoch history. The model handed back by a training call holds the weights of
// best_epoch (highest validation accuracy; earliest epoch on ties).
struct TrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> val_accuracy;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
  double seconds = 0.0;
};

void to_json(nlohmann::json& j, const TrainLog& log);
void from_json(const nlohmann::json& j, TrainLog& log);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Mini-batch Adam on cross-entropy with best-validation checkpointing. Labels must lie in
// model.classes. Raises TrainingDivergence on a non-finite loss.
TrainLog train_classifier(Classifier& model, const data::ImageSet& train, const data::ImageSet& val,
                          const TrainConfig& config);

struct Expert {
  std::string id;
  Classifier model;
  std::optional<std::vector<double>> reference_mean;
  TrainLog log;

  const std::vector<int>& label_set() const { return model.classes; }
  std::size_t feature_size() const { return model.feature_size(); }
};

Expert train_base(const std::string& id, const data::ImageSet& train, const data::ImageSet& val,
                  const std::vector<int>& label_set, const TrainConfig& config, std::size_t feature_size = 32);

// Clones base, attaches a freshly initialized head for label_set and trains every layer.
// The base expert is not modified.
Expert finetune_expert(const Expert& base, const std::string& id, const data::ImageSet& train,
                       const data::ImageSet& val, const std::vector<int>& label_set, const TrainConfig& config);

enum class HeadMode { Constant, Expand };

// Naive sequential fine-tuning: Constant replaces the head with one for label_set;
// Expand appends columns for classes the head does not cover yet and keeps the rest.
Classifier finetune_naive(Classifier model, const data::ImageSet& train, const data::ImageSet& val,
                          const std::vector<int>& label_set, HeadMode mode, const TrainConfig& config,
                          TrainLog* log = nullptr);

}  // namespace wsf::expert
