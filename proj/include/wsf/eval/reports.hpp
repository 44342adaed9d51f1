#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wsf/fusion/fusion.hpp"
#include "wsf/multisite/pipeline.hpp"

namespace wsf::eval {

// Shannon entropy (nats) of a probability vector; 0 log 0 = 0.
double entropy(std::span<const double> p);

struct AttentionHistogram {
  std::string mode;
  std::string dataset;
  std::vector<std::string> experts;
  std::size_t bins = 20;
  std::vector<std::vector<std::size_t>> counts;  // [expert][bin]
  std::size_t examples = 0;
  double mean_entropy = 0.0;
};

// Bins each column of weights [N,|d|] over [0,1]; a value of exactly 1 lands in the last bin.
AttentionHistogram attention_histogram(const multisite::AttentionRecord& record, std::vector<std::string> experts,
                                       std::size_t bins = 20);

struct NamedBatch {
  std::string dataset;
  fusion::FusionBatch batch;
};
// Raises ProtocolError for SF, which has no attention.
std::vector<AttentionHistogram> attention_report(const fusion::FusionModel& model, std::span<const NamedBatch> sets,
                                                 std::size_t bins = 20);

// Mean entropy over all examples of the records of one mode.
double mean_entropy(std::span<const multisite::AttentionRecord> records, const std::string& mode);

// Reads attention_<split>.csv back into records.
std::vector<multisite::AttentionRecord> read_attention_csv(std::string_view text, bool internal,
                                                           std::vector<std::string>* experts = nullptr);

std::string histogram_csv(std::span<const AttentionHistogram> hists);
std::string entropy_csv(std::span<const AttentionHistogram> hists);
std::string histogram_svg(std::span<const AttentionHistogram> hists);

std::string cumulative_csv(std::span<const multisite::CumulativePoint> points);
std::string cumulative_svg(std::span<const multisite::CumulativePoint> points);
std::string inference_csv(const multisite::InferenceTiming& t);
std::string inference_svg(const multisite::InferenceTiming& t);

// Writes attention_hist.csv, attention_entropy.csv and attention_hist.svg from the recorded
// attention files. Raises DataError when none exist.
std::vector<AttentionHistogram> write_attention_report(const std::filesystem::path& run_dir);
// Writes training_time.csv/.svg and inference_time.csv/.svg. Raises DataError when
// timing logs are missing.
std::vector<multisite::CumulativePoint> write_efficiency_report(const std::filesystem::path& run_dir);

}  // namespace wsf::eval
