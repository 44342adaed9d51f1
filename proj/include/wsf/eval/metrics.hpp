#pragma once

#include <span>
#include <string>
#include <vector>

namespace wsf::eval {

// Percent of predictions equal to the label. Raises DataError on an empty set.
double accuracy(std::span<const int> labels, std::span<const int> predictions);
// Mean per-class F1 (percent) over classes present in the labels.
double macro_f1(std::span<const int> labels, std::span<const int> predictions);

enum class Transfer { None, Features, Images };
std::string to_string(Transfer t);

struct MetricsRow {
  std::string method;
  int experts = 1;
  Transfer transfer = Transfer::None;
  std::string dataset;
  double acc = 0.0;
  double f1 = 0.0;
};

class MetricsReport {
 public:
  void add(const std::string& method, int experts, Transfer transfer, const std::string& dataset,
           std::span<const int> labels, std::span<const int> predictions);
  void add(MetricsRow row) { rows_.push_back(std::move(row)); }
  const std::vector<MetricsRow>& rows() const noexcept { return rows_; }

  // Method names in first-seen order.
  std::vector<std::string> methods() const;
  const MetricsRow& find(const std::string& method, const std::string& dataset) const;
  // Unweighted mean over the method's non-average rows.
  MetricsRow average(const std::string& method) const;

  // Header method,experts,transfer,dataset,acc,f1; each method's rows are followed by
  // its "Average" row.
  std::string csv() const;
  static MetricsReport from_csv(std::string_view text);

 private:
  std::vector<MetricsRow> rows_;
};

}  // namespace wsf::eval
