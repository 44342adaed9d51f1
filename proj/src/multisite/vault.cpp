#include "wsf/multisite/vault.hpp"

#include <algorithm>
#include <chrono>

#include "wsf/common/error.hpp"
#include "wsf/data/scenario.hpp"
#include "wsf/nmd/nmd.hpp"
#include "wsf/nn/weights_io.hpp"

namespace wsf::multisite {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

constexpr std::size_t kChunk = 256;

}  // namespace

SiteVault::SiteVault(data::SiteSplits splits, bool local, TransferLog* log)
    : splits_(std::move(splits)), local_(local), log_(log) {}

const data::ImageSet& SiteVault::images(BundleSplit split) const {
  switch (split) {
    case BundleSplit::Train: return splits_.train.examples;
    case BundleSplit::Val: return splits_.val.examples;
    case BundleSplit::Test: return splits_.test.examples;
  }
  throw DataError("bad split");
}

void SiteVault::record(int step, Direction d, PayloadKind k, std::size_t bytes, double seconds) {
  if (local_ || log_ == nullptr) return;
  log_->append({step, site_id(), d, k, bytes, seconds});
}

expert::ModelBlob SiteVault::remote_finetune(const expert::ModelBlob& base, const std::string& expert_id,
                                             const expert::TrainConfig& config, int step) {
  if (role() == data::SiteRole::External) {
    throw ProtocolError("site '" + site_id() + "' is an external test site and never trains");
  }
  auto t0 = Clock::now();
  const expert::Expert clone = expert::from_blob(base);
  record(step, Direction::ToSite, PayloadKind::Model, base.size_bytes(), since(t0));

  expert::Expert tuned = expert::finetune_expert(clone, expert_id, splits_.train.examples, splits_.val.examples,
                                                 label_subset(), config);
  nmd::attach_reference_mean(tuned, splits_.train.examples);

  t0 = Clock::now();
  auto blob = expert::to_blob(tuned);
  record(step, Direction::FromSite, PayloadKind::Model, blob.size_bytes(), since(t0));
  experts_.insert_or_assign(tuned.id, std::move(tuned));
  return blob;
}

expert::Expert SiteVault::train_local_base(const std::string& expert_id, const expert::TrainConfig& config,
                                           std::size_t feature_size) {
  if (!local_) throw ProtocolError("the base expert is trained at the local site, not at '" + site_id() + "'");
  expert::Expert e = expert::train_base(expert_id, splits_.train.examples, splits_.val.examples, label_subset(), config,
                                        feature_size);
  nmd::attach_reference_mean(e, splits_.train.examples);
  experts_.insert_or_assign(e.id, e);
  return e;
}

void SiteVault::deliver(const expert::ModelBlob& blob, int step) {
  const auto t0 = Clock::now();
  expert::Expert e = expert::from_blob(blob);
  record(step, Direction::ToSite, PayloadKind::Model, blob.size_bytes(), since(t0));
  experts_.insert_or_assign(e.id, std::move(e));
}

FeatureBundle SiteVault::extract(BundleSplit split, const std::vector<std::string>& roster, std::size_t n_aug,
                                 std::uint64_t seed, bool augmented) const {
  if (roster.empty()) throw DataError("feature export needs at least one expert");
  if (n_aug == 0) throw DataError("feature export needs at least one pass per example");
  std::vector<const expert::Expert*> experts;
  for (const auto& id : roster) {
    auto it = experts_.find(id);
    if (it == experts_.end()) throw DataError("expert '" + id + "' was never delivered to site '" + site_id() + "'");
    experts.push_back(&it->second);
  }
  const auto& set = images(split);
  FeatureBundle b;
  b.site_id = site_id();
  b.split = split;
  b.roster = roster;
  b.feature_size = experts[0]->feature_size();
  b.nmd_size = experts[0]->reference_mean ? experts[0]->reference_mean->size() : 0;
  for (const auto* e : experts) {
    const std::size_t p = e->reference_mean ? e->reference_mean->size() : 0;
    if (e->feature_size() != b.feature_size || p != b.nmd_size) {
      throw DataError("experts on site '" + site_id() + "' disagree on feature or neural-mean sizes");
    }
  }
  b.n_aug = n_aug;
  b.examples = set.size();
  const std::size_t rows = set.size() * n_aug, d = roster.size(), k = b.feature_size, p = b.nmd_size;
  b.features.assign(rows * d * k, 0.0);
  b.nmd.assign(rows * d * p, 0.0);

  const auto params = augmented ? data::AugmentParams{} : data::AugmentParams::identity();
  const std::string tag = "augment:" + site_id() + ":" + to_string(split);
  const std::size_t px = set.pixels_per_image();
  std::vector<double> pixels;
  for (std::size_t start = 0; start < set.size(); start += kChunk) {
    const std::size_t end = std::min(set.size(), start + kChunk);
    const std::size_t first_row = start * n_aug, chunk_rows = (end - start) * n_aug;
    nn::Tensor batch({chunk_rows, 1, set.height, set.width});
    for (std::size_t i = start; i < end; ++i) {
      Rng rng(derive_seed(seed, tag, i));
      for (std::size_t a = 0; a < n_aug; ++a) {
        const std::size_t local_row = (i - start) * n_aug + a;
        if (augmented) {
          pixels = data::augment(set.image(i), set.height, set.width, rng, params);
          std::copy(pixels.begin(), pixels.end(), batch.data() + local_row * px);
        } else {
          const auto img = set.image(i);
          std::copy(img.begin(), img.end(), batch.data() + local_row * px);
        }
        b.labels.push_back(set.labels[i]);
        b.aug_index.push_back(static_cast<int>(a));
        b.patients.push_back(set.patients[i]);
      }
    }
    for (std::size_t e = 0; e < d; ++e) {
      const auto out = nmd::run_expert(*experts[e], batch);
      for (std::size_t r = 0; r < chunk_rows; ++r) {
        const std::size_t row = first_row + r;
        std::copy(out.features.data() + r * k, out.features.data() + (r + 1) * k, b.features.data() + (row * d + e) * k);
        if (p > 0) std::copy(out.nmd.data() + r * p, out.nmd.data() + (r + 1) * p, b.nmd.data() + (row * d + e) * p);
      }
    }
  }
  b.validate();
  return b;
}

FeatureBundle SiteVault::export_feature_bundle(BundleSplit split, const std::vector<std::string>& roster,
                                               std::size_t n_aug, std::uint64_t seed, int step) {
  if (role() == data::SiteRole::External && split != BundleSplit::Test) {
    throw ProtocolError("site '" + site_id() + "' is an external test site; its data never feeds training");
  }
  FeatureBundle b = extract(split, roster, n_aug, seed, true);
  const auto t0 = Clock::now();
  const auto bytes = encode_bundle(b);
  record(step, Direction::FromSite, PayloadKind::Bundle, bytes.size(), since(t0));
  return b;
}

FeatureBundle SiteVault::evaluation_bundle(BundleSplit split, const std::vector<std::string>& roster) const {
  return extract(split, roster, 1, 0, false);
}

std::vector<int> SiteVault::predict_at_site(BundleSplit split, const expert::Classifier& model) const {
  return expert::predict(model, images(split));
}

expert::Classifier SiteVault::naive_finetune(const expert::Classifier& model, expert::HeadMode mode,
                                             const expert::TrainConfig& config, int step) {
  if (role() == data::SiteRole::External) {
    throw ProtocolError("site '" + site_id() + "' is an external test site and never trains");
  }
  auto t0 = Clock::now();
  std::size_t bytes = nn::encode_weights(model.parameters()).size();
  record(step, Direction::ToSite, PayloadKind::Model, bytes, since(t0));
  auto tuned = expert::finetune_naive(model, splits_.train.examples, splits_.val.examples, label_subset(), mode, config);
  t0 = Clock::now();
  bytes = nn::encode_weights(tuned.parameters()).size();
  record(step, Direction::FromSite, PayloadKind::Model, bytes, since(t0));
  return tuned;
}

}  // namespace wsf::multisite
