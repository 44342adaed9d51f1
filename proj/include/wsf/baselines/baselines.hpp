#pragma once

#include <span>
#include <string>
#include <vector>

#include "wsf/data/dataset.hpp"
#include "wsf/expert/train.hpp"

namespace wsf::baselines {

enum class BaselineKind { MaxLogit, MSP, ConfidenceRouting, CombineRetrain };
std::string to_string(BaselineKind kind);
// Accepts "maxlogit", "msp", "routing", "oracle" and the display names.
BaselineKind baseline_kind_from_string(const std::string& s);

// One expert's own-head logits for N inputs.
struct ExpertScores {
  std::vector<int> label_set;  // global ids, one per column
  nn::Tensor logits;           // [N, |label_set|]
};

// Own-head logits h W_dd + b computed from transferred features [N,k].
ExpertScores own_head_scores(const expert::Expert& expert, const nn::Tensor& features);

nn::Tensor softmax_rows(const nn::Tensor& logits);

// Per global class, the maximum own-head logit over experts that know the class;
// prediction is the best class, ties to the smallest global id.
std::vector<int> max_logit_predict(std::span<const ExpertScores> experts);
// As max_logit_predict over per-expert softmax probabilities.
std::vector<int> msp_predict(std::span<const ExpertScores> experts);
// The expert with the highest top softmax probability answers with its own argmax.
// Ties go to the lowest expert index.
std::vector<int> confidence_route_predict(std::span<const ExpertScores> experts);

std::vector<int> confidence_predict(BaselineKind kind, std::span<const ExpertScores> experts);

// Training data of one site as seen by the oracle.
struct PooledSite {
  const data::ImageSet* train = nullptr;
  const data::ImageSet* val = nullptr;
  std::vector<int> label_set;
};

// Trains one classifier from scratch on the union of the given sites over the union of
// their label sets.
expert::Classifier combine_retrain(std::span<const PooledSite> sites, const expert::TrainConfig& config,
                                   std::size_t feature_size = 32, expert::TrainLog* log = nullptr);

data::ImageSet concat_images(std::span<const data::ImageSet* const> sets);

}  // namespace wsf::baselines
