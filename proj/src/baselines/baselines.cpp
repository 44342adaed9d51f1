#include "wsf/baselines/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "wsf/common/error.hpp"

namespace wsf::baselines {

std::string to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::MaxLogit: return "Max Logit";
    case BaselineKind::MSP: return "MSP";
    case BaselineKind::ConfidenceRouting: return "Confidence Routing";
    case BaselineKind::CombineRetrain: return "Combine & Retrain (oracle)";
  }
  return "?";
}

BaselineKind baseline_kind_from_string(const std::string& s) {
  if (s == "maxlogit" || s == "Max Logit") return BaselineKind::MaxLogit;
  if (s == "msp" || s == "MSP") return BaselineKind::MSP;
  if (s == "routing" || s == "Confidence Routing") return BaselineKind::ConfidenceRouting;
  if (s == "oracle" || s == "Combine & Retrain (oracle)") return BaselineKind::CombineRetrain;
  throw DataError("unknown baseline kind '" + s + "' (expected maxlogit|msp|routing|oracle)");
}

ExpertScores own_head_scores(const expert::Expert& expert, const nn::Tensor& features) {
  nn::Graph g(false);
  return {expert.label_set(), g.value(expert.model.head.forward(g, g.constant_ref(features)))};
}

nn::Tensor softmax_rows(const nn::Tensor& logits) {
  nn::Graph g(false);
  return g.value(nn::softmax(g, g.constant_ref(logits)));
}

namespace {

std::size_t batch_size_of(std::span<const ExpertScores> experts) {
  if (experts.empty()) throw DataError("baseline: no experts");
  const std::size_t n = experts[0].logits.dim(0);
  for (const auto& e : experts) {
    if (e.logits.rank() != 2 || e.logits.dim(0) != n || e.logits.dim(1) != e.label_set.size()) {
      throw ShapeError("baseline: logits " + nn::shape_str(e.logits.shape()) + " do not match the label set");
    }
  }
  return n;
}

std::vector<int> per_class_max(std::span<const ExpertScores> experts, const std::vector<nn::Tensor>& scores) {
  const std::size_t n = batch_size_of(experts);
  std::set<int> all;
  for (const auto& e : experts) all.insert(e.label_set.begin(), e.label_set.end());
  const std::vector<int> classes(all.begin(), all.end());

  std::vector<int> out(n);
  std::vector<double> best(classes.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(best.begin(), best.end(), -std::numeric_limits<double>::infinity());
    for (std::size_t e = 0; e < experts.size(); ++e) {
      const auto& set = experts[e].label_set;
      for (std::size_t c = 0; c < set.size(); ++c) {
        const auto idx = static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), set[c]) - classes.begin());
        best[idx] = std::max(best[idx], scores[e].at(i, c));
      }
    }
    out[i] = classes[static_cast<std::size_t>(std::max_element(best.begin(), best.end()) - best.begin())];
  }
  return out;
}

}  // namespace

std::vector<int> max_logit_predict(std::span<const ExpertScores> experts) {
  std::vector<nn::Tensor> scores;
  for (const auto& e : experts) scores.push_back(e.logits);
  return per_class_max(experts, scores);
}

std::vector<int> msp_predict(std::span<const ExpertScores> experts) {
  batch_size_of(experts);
  std::vector<nn::Tensor> scores;
  for (const auto& e : experts) scores.push_back(softmax_rows(e.logits));
  return per_class_max(experts, scores);
}

std::vector<int> confidence_route_predict(std::span<const ExpertScores> experts) {
  const std::size_t n = batch_size_of(experts);
  std::vector<nn::Tensor> probs;
  for (const auto& e : experts) probs.push_back(softmax_rows(e.logits));
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = -1.0;
    std::size_t winner = 0, column = 0;
    for (std::size_t e = 0; e < experts.size(); ++e) {
      const std::size_t m = experts[e].label_set.size();
      const auto row = probs[e].values().subspan(i * m, m);
      const std::size_t c = expert::argmax(row);
      if (row[c] > best) {
        best = row[c];
        winner = e;
        column = c;
      }
    }
    out[i] = experts[winner].label_set[column];
  }
  return out;
}

std::vector<int> confidence_predict(BaselineKind kind, std::span<const ExpertScores> experts) {
  switch (kind) {
    case BaselineKind::MaxLogit: return max_logit_predict(experts);
    case BaselineKind::MSP: return msp_predict(experts);
    case BaselineKind::ConfidenceRouting: return confidence_route_predict(experts);
    case BaselineKind::CombineRetrain: break;
  }
  throw DataError("confidence_predict: the oracle is a trained model, not a confidence rule");
}

data::ImageSet concat_images(std::span<const data::ImageSet* const> sets) {
  data::ImageSet out;
  for (const auto* s : sets) {
    if (s->size() == 0) continue;
    if (out.size() == 0) {
      out.height = s->height;
      out.width = s->width;
    } else if (s->height != out.height || s->width != out.width) {
      throw ShapeError("cannot pool images of different sizes");
    }
    for (std::size_t i = 0; i < s->size(); ++i) out.push_back(s->image(i), s->labels[i], s->patients[i]);
  }
  return out;
}

expert::Classifier combine_retrain(std::span<const PooledSite> sites, const expert::TrainConfig& config,
                                   std::size_t feature_size, expert::TrainLog* log) {
  if (sites.empty()) throw DataError("combine_retrain: no sites");
  std::set<int> classes;
  std::vector<const data::ImageSet*> train, val;
  for (const auto& s : sites) {
    classes.insert(s.label_set.begin(), s.label_set.end());
    train.push_back(s.train);
    val.push_back(s.val);
  }
  const auto pooled_train = concat_images(train);
  const auto pooled_val = concat_images(val);
  if (pooled_train.size() == 0) throw DataError("combine_retrain: no training images");
  Rng rng(derive_seed(config.seed, "init:oracle", sites.size()));
  auto model = expert::make_classifier(pooled_train.height, feature_size, {classes.begin(), classes.end()}, rng);
  auto l = expert::train_classifier(model, pooled_train, pooled_val, config);
  if (log) *log = std::move(l);
  return model;
}

}  // namespace wsf::baselines
