#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wsf/expert/train.hpp"
#include "wsf/multisite/bundle.hpp"
#include "wsf/nn/layers.hpp"

namespace wsf::fusion {

enum class FusionMode { SF, AttnWSF, NmdWSF };
std::string to_string(FusionMode mode);
// Accepts "sf", "attn", "nmd" and the long names "attn-wSF", "nmd-wSF".
FusionMode fusion_mode_from_string(const std::string& s);

// Maps each global class to every position it occupies in the concatenated branch
// logits z_a. Pooled outputs are ordered by ascending global id.
struct PoolingMap {
  std::vector<int> classes;
  std::vector<std::vector<std::size_t>> positions;
  std::size_t width = 0;

  static PoolingMap build(const std::vector<std::vector<int>>& label_sets);
  // Pooled index of a global class, or -1.
  int index_of(int global_class) const;
};

// z~[n,c] = max over positions of class c in z_a[n,:]. Raises ShapeError if z_a's width
// disagrees with the map.
nn::Tensor knowledge_pool(const nn::Tensor& z_a, const PoolingMap& map);

// Per-expert inputs for a batch of N examples.
struct FusionBatch {
  std::vector<nn::Tensor> features;  // one [N,k] per expert
  std::vector<nn::Tensor> nmd;       // one [N,p] per expert (may be empty for SF/attn)
  std::size_t size() const { return features.empty() ? 0 : features.front().dim(0); }
};

struct ExpertSlot {
  std::string id;
  std::vector<int> label_set;
  std::size_t feature_size = 0;
  std::size_t nmd_size = 0;
};

// Frozen expert heads on the diagonal, trainable cross weights W_{src->dst} off the
// diagonal, and for weighted modes an attention net producing per-example weights A.
class FusionModel {
 public:
  FusionModel() = default;
  FusionModel(FusionMode mode, std::span<const expert::Expert> experts, std::uint64_t seed,
              std::size_t attention_hidden = 64);

  FusionMode mode() const noexcept { return mode_; }
  const std::vector<ExpertSlot>& experts() const noexcept { return experts_; }
  std::size_t expert_count() const noexcept { return experts_.size(); }
  const PoolingMap& pooling() const noexcept { return pooling_; }
  bool weighted() const noexcept { return mode_ != FusionMode::SF; }

  // W_{src->dst}: maps h_src onto the label set of dst.
  nn::Dense& cross(std::size_t src, std::size_t dst) { return cross_.at(src).at(dst); }
  const nn::Dense& cross(std::size_t src, std::size_t dst) const { return cross_.at(src).at(dst); }
  std::optional<nn::Sequential>& attention_net() { return attention_; }
  const std::optional<nn::Sequential>& attention_net() const { return attention_; }
  std::size_t attention_input_size() const;

  bool trained() const noexcept { return trained_; }
  void mark_trained() { trained_ = true; }
  // Replaces the attention output by 1/|d| for every example.
  bool force_uniform_attention = false;

  // Trainable off-diagonal blocks and attention parameters.
  std::vector<nn::Parameter*> trainable_parameters();
  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;

  struct Nodes {
    std::vector<nn::Var> branches;
    nn::Var concatenated;
    nn::Var pooled;
    std::optional<nn::Var> attention;
  };
  // Records the full fusion forward on g. Non-const records parameters for training.
  Nodes forward(nn::Graph& g, const FusionBatch& batch);
  Nodes forward(nn::Graph& g, const FusionBatch& batch) const;

 private:
  template <class Self>
  static Nodes forward_impl(Self& self, nn::Graph& g, const FusionBatch& batch);
  void name_parameters();

  FusionMode mode_ = FusionMode::SF;
  std::vector<ExpertSlot> experts_;
  std::vector<std::vector<nn::Dense>> cross_;
  std::optional<nn::Sequential> attention_;
  PoolingMap pooling_;
  bool trained_ = false;

  friend FusionModel decode_fusion(std::string_view, std::string_view);
};

// Branch logits z_d = sum_{d'} A_{d'} (h_{d'} W_{d'->d} + b_{d'->d}), one [N,|Y_d|] per branch.
// An empty `weights` means the unweighted sum (A = 1).
std::vector<nn::Tensor> branch_logits(const FusionModel& model, std::span<const nn::Tensor> features,
                                      const nn::Tensor& weights = {});

// Attention weights [N,|d|] from the concatenated h (attn) or g (nmd) input.
nn::Tensor attention_scores(const FusionModel& model, const nn::Tensor& input);

// Concatenation of the per-expert inputs the model's attention net consumes.
nn::Tensor attention_input(const FusionModel& model, const FusionBatch& batch);

struct FusionPrediction {
  std::vector<int> classes;  // global class per example
  nn::Tensor pooled_logits;  // [N, |pooled classes|]
  nn::Tensor attention;      // [N, |d|]; all-ones for SF
};

FusionPrediction predict(const FusionModel& model, const FusionBatch& batch);

struct FusionTrainConfig {
  int epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 7;
};

// Rows gathered from bundles whose roster matches the model's experts.
struct FusionRows {
  std::vector<nn::Tensor> features;  // per expert [R,k]
  std::vector<nn::Tensor> nmd;       // per expert [R,p]
  std::vector<int> labels;           // global class per row

  std::size_t size() const noexcept { return labels.size(); }
  FusionBatch gather(std::span<const std::size_t> rows) const;
  FusionBatch all() const;
};

// Raises DataError when a bundle's roster does not cover every expert of the model.
FusionRows collect_rows(const FusionModel& model, std::span<const multisite::FeatureBundle> bundles);

// Trains off-diagonal cross weights (and the attention net for weighted modes) with
// cross-entropy on the pooled logits; returns the best-validation-accuracy epoch.
FusionModel train_fusion(std::span<const multisite::FeatureBundle> train,
                         std::span<const multisite::FeatureBundle> val, std::span<const expert::Expert> experts,
                         FusionMode mode, const FusionTrainConfig& config, expert::TrainLog* log = nullptr);

}  // namespace wsf::fusion
