#include "wsf/fusion/fusion.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <numeric>

#include "wsf/common/error.hpp"
#include "wsf/expert/classifier.hpp"
#include "wsf/nn/adam.hpp"

namespace wsf::fusion {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::SF: return "SF";
    case FusionMode::AttnWSF: return "attn-wSF";
    case FusionMode::NmdWSF: return "nmd-wSF";
  }
  return "?";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "sf" || s == "SF") return FusionMode::SF;
  if (s == "attn" || s == "attn-wSF") return FusionMode::AttnWSF;
  if (s == "nmd" || s == "nmd-wSF") return FusionMode::NmdWSF;
  throw DataError("unknown fusion mode '" + s + "' (expected sf|attn|nmd)");
}

PoolingMap PoolingMap::build(const std::vector<std::vector<int>>& label_sets) {
  std::map<int, std::vector<std::size_t>> where;
  std::size_t pos = 0;
  for (const auto& set : label_sets)
    for (int c : set) where[c].push_back(pos++);
  PoolingMap m;
  m.width = pos;
  for (auto& [c, ps] : where) {
    m.classes.push_back(c);
    m.positions.push_back(std::move(ps));
  }
  return m;
}

int PoolingMap::index_of(int global_class) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), global_class);
  return (it != classes.end() && *it == global_class) ? static_cast<int>(it - classes.begin()) : -1;
}

nn::Tensor knowledge_pool(const nn::Tensor& z_a, const PoolingMap& map) {
  const nn::Tensor z = z_a.rank() == 1 ? z_a.reshaped({1, z_a.size()}) : z_a;
  if (z.rank() != 2 || z.dim(1) != map.width) {
    throw ShapeError("knowledge_pool: logits " + nn::shape_str(z_a.shape()) + " vs pooling map width " +
                     std::to_string(map.width));
  }
  nn::Graph g(false);
  nn::Tensor out = g.value(nn::max_over_groups(g, g.constant_ref(z), map.positions));
  return z_a.rank() == 1 ? out.reshaped({map.classes.size()}) : out;
}

FusionModel::FusionModel(FusionMode mode, std::span<const expert::Expert> experts, std::uint64_t seed,
                         std::size_t attention_hidden)
    : mode_(mode) {
  if (experts.empty()) throw DataError("fusion: no experts");
  std::vector<std::vector<int>> sets;
  for (const auto& e : experts) {
    ExpertSlot slot{e.id, e.label_set(), e.feature_size(), e.reference_mean ? e.reference_mean->size() : 0};
    if (mode == FusionMode::NmdWSF && slot.nmd_size == 0) {
      throw ProtocolError("fusion: nmd-wSF needs a reference mean on expert '" + e.id + "'");
    }
    experts_.push_back(std::move(slot));
    sets.push_back(e.label_set());
  }
  pooling_ = PoolingMap::build(sets);

  const std::size_t d = experts.size();
  cross_.resize(d);
  for (std::size_t src = 0; src < d; ++src) {
    for (std::size_t dst = 0; dst < d; ++dst) {
      if (src == dst) {
        nn::Dense head = experts[src].model.head;
        head.weight.trainable = false;
        head.bias.trainable = false;
        cross_[src].push_back(std::move(head));
      } else {
        cross_[src].push_back(nn::Dense::zeros(experts_[src].feature_size, experts_[dst].label_set.size()));
      }
    }
  }

  if (weighted()) {
    Rng rng(derive_seed(seed, "attention-init"));
    nn::Sequential net;
    net.add(nn::Dense(attention_input_size(), attention_hidden, rng))
        .add(nn::Relu{})
        .add(nn::Dense(attention_hidden, attention_hidden, rng))
        .add(nn::Relu{})
        .add(nn::Dense::zeros(attention_hidden, d))
        .add(nn::Softmax{});
    attention_ = std::move(net);
  }
  name_parameters();
}

void FusionModel::name_parameters() {
  for (std::size_t s = 0; s < cross_.size(); ++s) {
    for (std::size_t t = 0; t < cross_[s].size(); ++t) {
      const std::string base = "cross." + std::to_string(s) + "." + std::to_string(t) + ".";
      cross_[s][t].weight.name = base + "weight";
      cross_[s][t].bias.name = base + "bias";
    }
  }
  if (attention_) attention_->assign_names("attention.");
}

std::size_t FusionModel::attention_input_size() const {
  std::size_t n = 0;
  for (const auto& e : experts_) n += mode_ == FusionMode::NmdWSF ? e.nmd_size : e.feature_size;
  return n;
}

std::vector<nn::Parameter*> FusionModel::parameters() {
  std::vector<nn::Parameter*> ps;
  for (auto& row : cross_)
    for (auto& blk : row) {
      ps.push_back(&blk.weight);
      ps.push_back(&blk.bias);
    }
  if (attention_)
    for (auto* p : attention_->parameters()) ps.push_back(p);
  return ps;
}

std::vector<const nn::Parameter*> FusionModel::parameters() const {
  auto ps = const_cast<FusionModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::vector<nn::Parameter*> FusionModel::trainable_parameters() {
  auto ps = parameters();
  std::erase_if(ps, [](const nn::Parameter* p) { return !p->trainable; });
  return ps;
}

template <class Self>
FusionModel::Nodes FusionModel::forward_impl(Self& self, nn::Graph& g, const FusionBatch& batch) {
  const std::size_t d = self.experts_.size();
  if (batch.features.size() != d) {
    throw DataError("fusion: expected feature vectors from " + std::to_string(d) + " experts, got " +
                    std::to_string(batch.features.size()));
  }
  const std::size_t n = batch.size();
  std::vector<nn::Var> h;
  for (std::size_t e = 0; e < d; ++e) {
    const auto& t = batch.features[e];
    if (t.rank() != 2 || t.dim(0) != n || t.dim(1) != self.experts_[e].feature_size) {
      throw ShapeError("fusion: features of expert '" + self.experts_[e].id + "' have shape " + nn::shape_str(t.shape()));
    }
    h.push_back(g.constant_ref(t));
  }

  Nodes out;
  if (self.weighted()) {
    if (self.force_uniform_attention) {
      out.attention = g.constant(nn::Tensor({n, d}, 1.0 / static_cast<double>(d)));
    } else {
      std::vector<nn::Var> parts;
      if (self.mode_ == FusionMode::NmdWSF) {
        if (batch.nmd.size() != d) throw DataError("fusion: nmd-wSF needs nmd vectors from every expert");
        for (std::size_t e = 0; e < d; ++e) {
          const auto& t = batch.nmd[e];
          if (t.rank() != 2 || t.dim(0) != n || t.dim(1) != self.experts_[e].nmd_size) {
            throw ShapeError("fusion: nmd vectors of expert '" + self.experts_[e].id + "' have shape " +
                             nn::shape_str(t.shape()));
          }
          parts.push_back(g.constant_ref(t));
        }
      } else {
        parts = h;
      }
      const nn::Var in = d == 1 ? parts[0] : nn::concat_cols(g, parts);
      out.attention = self.attention_->forward(g, in);
    }
  }

  for (std::size_t dst = 0; dst < d; ++dst) {
    std::optional<nn::Var> z;
    for (std::size_t src = 0; src < d; ++src) {
      nn::Var c = self.cross_[src][dst].forward(g, h[src]);
      if (out.attention) c = nn::scale_rows(g, c, *out.attention, src);
      z = z ? nn::add(g, *z, c) : c;
    }
    out.branches.push_back(*z);
  }
  out.concatenated = d == 1 ? out.branches[0] : nn::concat_cols(g, out.branches);
  out.pooled = nn::max_over_groups(g, out.concatenated, self.pooling_.positions);
  return out;
}

FusionModel::Nodes FusionModel::forward(nn::Graph& g, const FusionBatch& batch) { return forward_impl(*this, g, batch); }
FusionModel::Nodes FusionModel::forward(nn::Graph& g, const FusionBatch& batch) const {
  return forward_impl(*this, g, batch);
}

std::vector<nn::Tensor> branch_logits(const FusionModel& model, std::span<const nn::Tensor> features,
                                      const nn::Tensor& weights) {
  const std::size_t d = model.expert_count();
  if (features.size() != d) {
    throw DataError("branch_logits: expected " + std::to_string(d) + " feature vectors, got " +
                    std::to_string(features.size()));
  }
  const std::size_t n = features[0].dim(0);
  if (!weights.empty() && (weights.rank() != 2 || weights.dim(0) != n || weights.dim(1) != d)) {
    throw ShapeError("branch_logits: weights " + nn::shape_str(weights.shape()) + ", expected [" + std::to_string(n) +
                     "," + std::to_string(d) + "]");
  }
  nn::Graph g(false);
  std::vector<nn::Var> h;
  for (const auto& f : features) h.push_back(g.constant_ref(f));
  std::optional<nn::Var> a;
  if (!weights.empty()) a = g.constant_ref(weights);
  std::vector<nn::Tensor> out;
  for (std::size_t dst = 0; dst < d; ++dst) {
    std::optional<nn::Var> z;
    for (std::size_t src = 0; src < d; ++src) {
      nn::Var c = model.cross(src, dst).forward(g, h[src]);
      if (a) c = nn::scale_rows(g, c, *a, src);
      z = z ? nn::add(g, *z, c) : c;
    }
    out.push_back(g.value(*z));
  }
  return out;
}

nn::Tensor attention_scores(const FusionModel& model, const nn::Tensor& input) {
  if (!model.weighted() || !model.attention_net()) {
    throw ProtocolError("attention_scores: " + to_string(model.mode()) + " has no attention network");
  }
  if (input.rank() != 2 || input.dim(1) != model.attention_input_size()) {
    throw ShapeError("attention_scores: expected [N," + std::to_string(model.attention_input_size()) + "], got " +
                     nn::shape_str(input.shape()));
  }
  if (model.force_uniform_attention) {
    return nn::Tensor({input.dim(0), model.expert_count()}, 1.0 / static_cast<double>(model.expert_count()));
  }
  nn::Graph g(false);
  return g.value(model.attention_net()->forward(g, g.constant_ref(input)));
}

nn::Tensor attention_input(const FusionModel& model, const FusionBatch& batch) {
  const auto& parts = model.mode() == FusionMode::NmdWSF ? batch.nmd : batch.features;
  if (parts.size() != model.expert_count()) throw DataError("attention_input: missing expert vectors");
  nn::Graph g(false);
  std::vector<nn::Var> vs;
  for (const auto& t : parts) vs.push_back(g.constant_ref(t));
  return g.value(nn::concat_cols(g, vs));
}

FusionPrediction predict(const FusionModel& model, const FusionBatch& batch) {
  if (!model.trained()) throw ProtocolError("predict: fusion model has not been trained");
  nn::Graph g(false);
  const auto nodes = model.forward(g, batch);
  FusionPrediction out;
  out.pooled_logits = g.value(nodes.pooled);
  const std::size_t n = batch.size(), m = out.pooled_logits.dim(1);
  out.attention = nodes.attention ? g.value(*nodes.attention) : nn::Tensor({n, model.expert_count()}, 1.0);
  out.classes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.classes[i] = model.pooling().classes[expert::argmax(out.pooled_logits.values().subspan(i * m, m))];
  }
  return out;
}

FusionBatch FusionRows::gather(std::span<const std::size_t> rows) const {
  FusionBatch b;
  auto pick = [&](const nn::Tensor& src) {
    const std::size_t w = src.dim(1);
    nn::Tensor t({rows.size(), w});
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy(src.data() + rows[i] * w, src.data() + (rows[i] + 1) * w, t.data() + i * w);
    return t;
  };
  for (const auto& f : features) b.features.push_back(pick(f));
  for (const auto& f : nmd) b.nmd.push_back(pick(f));
  return b;
}

FusionBatch FusionRows::all() const { return {features, nmd}; }

FusionRows collect_rows(const FusionModel& model, std::span<const multisite::FeatureBundle> bundles) {
  const std::size_t d = model.expert_count();
  const bool need_nmd = model.mode() == FusionMode::NmdWSF;
  std::size_t total = 0;
  std::vector<std::vector<std::size_t>> slot_of(bundles.size());
  for (std::size_t b = 0; b < bundles.size(); ++b) {
    const auto& bundle = bundles[b];
    bundle.validate();
    for (const auto& e : model.experts()) {
      auto it = std::find(bundle.roster.begin(), bundle.roster.end(), e.id);
      if (it == bundle.roster.end()) {
        throw DataError("bundle from site '" + bundle.site_id + "' is missing vectors of expert '" + e.id + "'");
      }
      if (bundle.feature_size != e.feature_size || (need_nmd && bundle.nmd_size != e.nmd_size)) {
        throw DataError("bundle from site '" + bundle.site_id + "' has vector sizes that do not match expert '" + e.id + "'");
      }
      slot_of[b].push_back(static_cast<std::size_t>(it - bundle.roster.begin()));
    }
    total += bundle.rows();
  }

  FusionRows rows;
  for (const auto& e : model.experts()) {
    rows.features.emplace_back(nn::Shape{total, e.feature_size});
    if (need_nmd) rows.nmd.emplace_back(nn::Shape{total, e.nmd_size});
  }
  std::size_t r = 0;
  for (std::size_t b = 0; b < bundles.size(); ++b) {
    const auto& bundle = bundles[b];
    for (std::size_t i = 0; i < bundle.rows(); ++i, ++r) {
      for (std::size_t e = 0; e < d; ++e) {
        auto hv = bundle.h(i, slot_of[b][e]);
        std::copy(hv.begin(), hv.end(), rows.features[e].data() + r * hv.size());
        if (need_nmd) {
          auto gv = bundle.g(i, slot_of[b][e]);
          std::copy(gv.begin(), gv.end(), rows.nmd[e].data() + r * gv.size());
        }
      }
      rows.labels.push_back(bundle.labels[i]);
    }
  }
  return rows;
}

namespace {

double rows_accuracy(const FusionModel& model, const FusionRows& rows) {
  if (rows.size() == 0) return 0.0;
  const auto pred = predict(model, rows.all());
  std::size_t ok = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) ok += pred.classes[i] == rows.labels[i];
  return static_cast<double>(ok) / static_cast<double>(rows.size());
}

}  // namespace

FusionModel train_fusion(std::span<const multisite::FeatureBundle> train,
                         std::span<const multisite::FeatureBundle> val, std::span<const expert::Expert> experts,
                         FusionMode mode, const FusionTrainConfig& config, expert::TrainLog* log_out) {
  if (config.epochs <= 0 || config.batch_size == 0 || !(config.learning_rate > 0.0)) {
    throw DataError("fusion training: invalid config");
  }
  const auto t0 = std::chrono::steady_clock::now();
  FusionModel model(mode, experts, config.seed);
  const FusionRows train_rows = collect_rows(model, train);
  const FusionRows val_rows = collect_rows(model, val);
  if (train_rows.size() == 0) throw DataError("fusion training: no training rows");
  if (val_rows.size() == 0) throw DataError("fusion training: no validation rows");

  std::vector<int> targets(train_rows.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    targets[i] = model.pooling().index_of(train_rows.labels[i]);
    if (targets[i] < 0) {
      throw DataError("fusion training: label " + std::to_string(train_rows.labels[i]) + " is not covered by any expert");
    }
  }

  model.mark_trained();
  expert::TrainLog log;
  FusionModel best = model;
  auto params = model.trainable_parameters();
  nn::AdamState adam = nn::make_adam_state(params);
  Rng rng(derive_seed(config.seed, "fusion-shuffle"));
  std::vector<std::size_t> order(train_rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> batch_targets;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const FusionBatch batch = train_rows.gather(idx);
      batch_targets.clear();
      for (auto i : idx) batch_targets.push_back(targets[i]);

      nn::zero_grad(params);
      nn::Graph g;
      try {
        const auto nodes = model.forward(g, batch);
        const nn::Var loss = nn::cross_entropy(g, nodes.pooled, batch_targets);
        loss_sum += g.value(loss)[0] * static_cast<double>(idx.size());
        g.backward(loss);
        if (!params.empty()) nn::adam_step(params, adam, config.learning_rate);
      } catch (const NonFiniteError& e) {
        throw TrainingDivergence("fusion training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    log.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
    double acc = 0.0;
    try {
      acc = rows_accuracy(model, val_rows);
    } catch (const NonFiniteError& e) {
      throw TrainingDivergence("fusion validation diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    log.val_accuracy.push_back(acc);
    if (log.best_epoch < 0 || acc > log.best_val_accuracy) {
      log.best_epoch = epoch;
      log.best_val_accuracy = acc;
      best = model;
    }
  }
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (log_out) *log_out = std::move(log);
  return best;
}

}  // namespace wsf::fusion
