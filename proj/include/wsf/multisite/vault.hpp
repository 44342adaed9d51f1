#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wsf/data/dataset.hpp"
#include "wsf/expert/expert_io.hpp"
#include "wsf/multisite/bundle.hpp"
#include "wsf/multisite/transfer_log.hpp"

namespace wsf::multisite {

// A site's private data. Pixels are only touched by member functions, which stand for
// code executing on that site's server; what they return is weights, vectors or
// predictions. Transfers across the boundary are appended to the log unless the vault
// is the local (base) site.
class SiteVault {
 public:
  SiteVault(data::SiteSplits splits, bool local, TransferLog* log);

  const std::string& site_id() const noexcept { return splits_.train.site_id; }
  data::SiteRole role() const noexcept { return splits_.train.role; }
  const std::vector<int>& label_subset() const noexcept { return splits_.train.label_subset; }
  bool local() const noexcept { return local_; }
  std::size_t examples(BundleSplit split) const { return images(split).size(); }

  // Clones the delivered base, fine-tunes it here, attaches the reference mean and sends
  // the expert back. Raises ProtocolError on external sites.
  expert::ModelBlob remote_finetune(const expert::ModelBlob& base, const std::string& expert_id,
                                    const expert::TrainConfig& config, int step);

  // Trains the base expert where its data lives. Only the local site may do this.
  expert::Expert train_local_base(const std::string& expert_id, const expert::TrainConfig& config,
                                  std::size_t feature_size);

  // Stores an expert on this site for later feature extraction.
  void deliver(const expert::ModelBlob& blob, int step);
  // Places an expert the site already holds, e.g. when a run is reopened, or one needed
  // only for evaluation. Not a training transfer, so nothing is logged.
  void install(const expert::Expert& e) { experts_.insert_or_assign(e.id, e); }
  bool has_expert(const std::string& id) const { return experts_.count(id) != 0; }

  // n_aug augmented passes of every roster expert over the split. Raises DataError when a
  // roster expert was never delivered, ProtocolError for training splits of external sites.
  FeatureBundle export_feature_bundle(BundleSplit split, const std::vector<std::string>& roster, std::size_t n_aug,
                                      std::uint64_t seed, int step);

  // Unaugmented vectors for evaluation at this site; not a protocol transfer.
  FeatureBundle evaluation_bundle(BundleSplit split, const std::vector<std::string>& roster) const;
  // Predictions of a single classifier on the split.
  std::vector<int> predict_at_site(BundleSplit split, const expert::Classifier& model) const;
  std::vector<int> labels(BundleSplit split) const { return images(split).labels; }

  // Sequential naive fine-tuning of a model that visits this site.
  expert::Classifier naive_finetune(const expert::Classifier& model, expert::HeadMode mode,
                                    const expert::TrainConfig& config, int step);

 private:
  const data::ImageSet& images(BundleSplit split) const;
  FeatureBundle extract(BundleSplit split, const std::vector<std::string>& roster, std::size_t n_aug,
                        std::uint64_t seed, bool augmented) const;
  void record(int step, Direction d, PayloadKind k, std::size_t bytes, double seconds);

  data::SiteSplits splits_;
  bool local_;
  TransferLog* log_;
  std::map<std::string, expert::Expert> experts_;
};

}  // namespace wsf::multisite
