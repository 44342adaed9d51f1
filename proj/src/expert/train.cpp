#include "wsf/expert/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "wsf/common/error.hpp"
#include "wsf/nn/adam.hpp"

namespace wsf::expert {

void TrainConfig::validate() const {
  if (epochs <= 0) throw DataError("train config: epochs must be > 0");
  if (batch_size == 0) throw DataError("train config: batch size must be > 0");
  if (!(learning_rate > 0.0)) throw DataError("train config: learning rate must be > 0");
}

void to_json(nlohmann::json& j, const TrainLog& log) {
  j = {{"epoch_loss", log.epoch_loss},
       {"val_accuracy", log.val_accuracy},
       {"best_epoch", log.best_epoch},
       {"best_val_accuracy", log.best_val_accuracy},
       {"seconds", log.seconds}};
}

void from_json(const nlohmann::json& j, TrainLog& log) {
  log.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
  log.val_accuracy = j.at("val_accuracy").get<std::vector<double>>();
  log.best_epoch = j.at("best_epoch").get<int>();
  log.best_val_accuracy = j.at("best_val_accuracy").get<double>();
  log.seconds = j.value("seconds", 0.0);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.seed = j.value("seed", d.seed);
}

TrainLog train_classifier(Classifier& model, const data::ImageSet& train, const data::ImageSet& val,
                          const TrainConfig& config) {
  config.validate();
  if (train.size() == 0) throw DataError("training: empty training split");
  if (val.size() == 0) throw DataError("training: empty validation split");

  std::vector<int> local(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    local[i] = model.column_of(train.labels[i]);
    if (local[i] < 0) throw DataError("training: label " + std::to_string(train.labels[i]) + " not in model label set");
  }

  const auto t0 = std::chrono::steady_clock::now();
  TrainLog log;
  Classifier best = model;
  auto params = model.parameters();
  nn::AdamState adam = nn::make_adam_state(params);
  Rng rng(derive_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> batch_labels;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const nn::Tensor x = train.batch(idx);
      batch_labels.clear();
      for (auto i : idx) batch_labels.push_back(local[i]);

      nn::zero_grad(params);
      nn::Graph g;
      try {
        const nn::Var h = model.encoder.forward(g, g.constant_ref(x));
        const nn::Var z = model.head.forward(g, h);
        const nn::Var loss = nn::cross_entropy(g, z, batch_labels);
        loss_sum += g.value(loss)[0] * static_cast<double>(idx.size());
        g.backward(loss);
        nn::adam_step(params, adam, config.learning_rate);
      } catch (const NonFiniteError& e) {
        throw TrainingDivergence(std::string("training diverged at epoch ") + std::to_string(epoch) + ": " + e.what());
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(mean_loss)) throw TrainingDivergence("training loss is not finite at epoch " + std::to_string(epoch));
    log.epoch_loss.push_back(mean_loss);
    double acc = 0.0;
    try {
      acc = accuracy(model, val);
    } catch (const NonFiniteError& e) {
      throw TrainingDivergence("validation diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    log.val_accuracy.push_back(acc);
    if (log.best_epoch < 0 || acc > log.best_val_accuracy) {
      log.best_epoch = epoch;
      log.best_val_accuracy = acc;
      best = model;
    }
  }
  model = std::move(best);
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

Expert train_base(const std::string& id, const data::ImageSet& train, const data::ImageSet& val,
                  const std::vector<int>& label_set, const TrainConfig& config, std::size_t feature_size) {
  if (label_set.empty()) throw DataError("train_base: empty label set");
  Rng rng(derive_seed(config.seed, "init:" + id));
  Expert e;
  e.id = id;
  e.model = make_classifier(train.height, feature_size, label_set, rng);
  e.log = train_classifier(e.model, train, val, config);
  return e;
}

Expert finetune_expert(const Expert& base, const std::string& id, const data::ImageSet& train,
                       const data::ImageSet& val, const std::vector<int>& label_set, const TrainConfig& config) {
  if (label_set.empty()) throw DataError("finetune_expert: empty label set");
  Rng rng(derive_seed(config.seed, "head:" + id));
  Expert e;
  e.id = id;
  e.model = base.model;
  e.model.head = make_head(base.feature_size(), label_set.size(), rng);
  e.model.classes = label_set;
  e.model.set_trainable(true);
  e.log = train_classifier(e.model, train, val, config);
  return e;
}

Classifier finetune_naive(Classifier model, const data::ImageSet& train, const data::ImageSet& val,
                          const std::vector<int>& label_set, HeadMode mode, const TrainConfig& config,
                          TrainLog* log) {
  Rng rng(derive_seed(config.seed, "naive-head"));
  const std::size_t k = model.feature_size();
  if (mode == HeadMode::Constant) {
    model.head = make_head(k, label_set.size(), rng);
    model.classes = label_set;
  } else {
    std::vector<int> novel;
    for (int c : label_set)
      if (model.column_of(c) < 0) novel.push_back(c);
    if (!novel.empty()) {
      const std::size_t old_w = model.classes.size(), new_w = old_w + novel.size();
      nn::Dense fresh = make_head(k, novel.size(), rng);
      nn::Dense grown = make_head(k, new_w, rng);
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < old_w; ++j) grown.weight.value.at(i, j) = model.head.weight.value.at(i, j);
        for (std::size_t j = 0; j < novel.size(); ++j) grown.weight.value.at(i, old_w + j) = fresh.weight.value.at(i, j);
      }
      for (std::size_t j = 0; j < old_w; ++j) grown.bias.value[j] = model.head.bias.value[j];
      for (std::size_t j = 0; j < novel.size(); ++j) grown.bias.value[old_w + j] = 0.0;
      model.head = std::move(grown);
      model.classes.insert(model.classes.end(), novel.begin(), novel.end());
    }
  }
  model.set_trainable(true);
  auto l = train_classifier(model, train, val, config);
  if (log) *log = std::move(l);
  return model;
}

}  // namespace wsf::expert
