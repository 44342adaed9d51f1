#include "wsf/eval/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "wsf/common/error.hpp"

namespace wsf::eval {

namespace {

void check_sizes(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.empty()) throw DataError("cannot evaluate on an empty test set");
  if (labels.size() != predictions.size()) {
    throw DataError("got " + std::to_string(predictions.size()) + " predictions for " + std::to_string(labels.size()) +
                    " labels");
  }
}

}  // namespace

double accuracy(std::span<const int> labels, std::span<const int> predictions) {
  check_sizes(labels, predictions);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += labels[i] == predictions[i];
  return 100.0 * static_cast<double>(ok) / static_cast<double>(labels.size());
}

double macro_f1(std::span<const int> labels, std::span<const int> predictions) {
  check_sizes(labels, predictions);
  std::map<int, std::size_t> tp, fp, fn;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == predictions[i]) {
      ++tp[labels[i]];
    } else {
      ++fn[labels[i]];
      ++fp[predictions[i]];
    }
  }
  const std::set<int> present(labels.begin(), labels.end());
  double sum = 0.0;
  for (int c : present) {
    const double t = static_cast<double>(tp[c]);
    const double denom = 2.0 * t + static_cast<double>(fp[c]) + static_cast<double>(fn[c]);
    sum += denom > 0 ? 2.0 * t / denom : 0.0;
  }
  return 100.0 * sum / static_cast<double>(present.size());
}

std::string to_string(Transfer t) {
  switch (t) {
    case Transfer::None: return "None";
    case Transfer::Features: return "Features";
    case Transfer::Images: return "Images";
  }
  return "?";
}

void MetricsReport::add(const std::string& method, int experts, Transfer transfer, const std::string& dataset,
                        std::span<const int> labels, std::span<const int> predictions) {
  rows_.push_back({method, experts, transfer, dataset, accuracy(labels, predictions), macro_f1(labels, predictions)});
}

std::vector<std::string> MetricsReport::methods() const {
  std::vector<std::string> out;
  for (const auto& r : rows_)
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  return out;
}

const MetricsRow& MetricsReport::find(const std::string& method, const std::string& dataset) const {
  for (const auto& r : rows_)
    if (r.method == method && r.dataset == dataset) return r;
  throw DataError("no metrics for " + method + " on " + dataset);
}

MetricsRow MetricsReport::average(const std::string& method) const {
  MetricsRow avg;
  std::size_t n = 0;
  for (const auto& r : rows_) {
    if (r.method != method || r.dataset == "Average") continue;
    avg.method = r.method;
    avg.experts = r.experts;
    avg.transfer = r.transfer;
    avg.acc += r.acc;
    avg.f1 += r.f1;
    ++n;
  }
  if (n == 0) throw DataError("no metrics for " + method);
  avg.dataset = "Average";
  avg.acc /= static_cast<double>(n);
  avg.f1 /= static_cast<double>(n);
  return avg;
}

std::string MetricsReport::csv() const {
  std::ostringstream out;
  out << "method,experts,transfer,dataset,acc,f1\n";
  char buf[64];
  auto line = [&](const MetricsRow& r) {
    std::snprintf(buf, sizeof buf, "%.4f,%.4f", r.acc, r.f1);
    out << r.method << ',' << r.experts << ',' << to_string(r.transfer) << ',' << r.dataset << ',' << buf << '\n';
  };
  for (const auto& m : methods()) {
    for (const auto& r : rows_)
      if (r.method == m && r.dataset != "Average") line(r);
    line(average(m));
  }
  return out.str();
}

MetricsReport MetricsReport::from_csv(std::string_view text) {
  MetricsReport report;
  std::istringstream in{std::string(text)};
  std::string line;
  std::getline(in, line);
  if (line != "method,experts,transfer,dataset,acc,f1") throw DataError("not a metrics CSV");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw DataError("bad metrics line: " + line);
    if (f[3] == "Average") continue;
    const Transfer t = f[2] == "Images" ? Transfer::Images : f[2] == "Features" ? Transfer::Features : Transfer::None;
    report.add({f[0], std::stoi(f[1]), t, f[3], std::stod(f[4]), std::stod(f[5])});
  }
  return report;
}

}  // namespace wsf::eval
