#include "wsf/eval/reports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "wsf/common/binary_io.hpp"
#include "wsf/common/error.hpp"

namespace wsf::eval {

namespace fs = std::filesystem;

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

AttentionHistogram attention_histogram(const multisite::AttentionRecord& record, std::vector<std::string> experts,
                                       std::size_t bins) {
  if (bins == 0) throw DataError("histogram needs at least one bin");
  const auto& w = record.weights;
  if (w.rank() != 2 || w.dim(1) != experts.size()) {
    throw ShapeError("attention " + nn::shape_str(w.shape()) + " vs " + std::to_string(experts.size()) + " experts");
  }
  AttentionHistogram h;
  h.mode = record.mode;
  h.dataset = record.dataset;
  h.experts = std::move(experts);
  h.bins = bins;
  h.examples = w.dim(0);
  h.counts.assign(w.dim(1), std::vector<std::size_t>(bins, 0));
  double sum = 0.0;
  for (std::size_t i = 0; i < w.dim(0); ++i) {
    const auto row = w.values().subspan(i * w.dim(1), w.dim(1));
    for (std::size_t e = 0; e < row.size(); ++e) {
      const double a = std::clamp(row[e], 0.0, 1.0);
      h.counts[e][std::min(bins - 1, static_cast<std::size_t>(a * static_cast<double>(bins)))]++;
    }
    sum += entropy(row);
  }
  h.mean_entropy = h.examples ? sum / static_cast<double>(h.examples) : 0.0;
  return h;
}

std::vector<AttentionHistogram> attention_report(const fusion::FusionModel& model, std::span<const NamedBatch> sets,
                                                 std::size_t bins) {
  if (!model.weighted()) throw ProtocolError("SF has no attention weights to report");
  std::vector<std::string> ids;
  for (const auto& e : model.experts()) ids.push_back(e.id);
  std::vector<AttentionHistogram> out;
  for (const auto& s : sets) {
    const auto a = fusion::attention_scores(model, fusion::attention_input(model, s.batch));
    out.push_back(attention_histogram({fusion::to_string(model.mode()), s.dataset, true, a}, ids, bins));
  }
  return out;
}

double mean_entropy(std::span<const multisite::AttentionRecord> records, const std::string& mode) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.mode != mode) continue;
    const std::size_t w = r.weights.dim(1);
    for (std::size_t i = 0; i < r.weights.dim(0); ++i, ++n) sum += entropy(r.weights.values().subspan(i * w, w));
  }
  if (n == 0) throw DataError("no attention weights recorded for " + mode);
  return sum / static_cast<double>(n);
}

std::vector<multisite::AttentionRecord> read_attention_csv(std::string_view text, bool internal,
                                                           std::vector<std::string>* experts) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) header.push_back(cell);
  }
  if (header.size() < 4 || header[0] != "mode" || header[1] != "dataset" || header[2] != "row") {
    throw DataError("not an attention CSV");
  }
  const std::size_t d = header.size() - 3;
  if (experts) experts->assign(header.begin() + 3, header.end());

  std::vector<multisite::AttentionRecord> out;
  std::vector<std::vector<double>> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != d + 3) throw DataError("bad attention line: " + line);
    if (out.empty() || out.back().mode != f[0] || out.back().dataset != f[1]) {
      out.push_back({f[0], f[1], internal, {}});
      values.emplace_back();
    }
    for (std::size_t e = 0; e < d; ++e) values.back().push_back(std::stod(f[3 + e]));
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t n = values[i].size() / d;
    out[i].weights = nn::Tensor({n, d}, std::move(values[i]));
  }
  return out;
}

std::string histogram_csv(std::span<const AttentionHistogram> hists) {
  std::ostringstream out;
  out << "mode,dataset,expert,bin_low,bin_high,count\n";
  char buf[64];
  for (const auto& h : hists) {
    for (std::size_t e = 0; e < h.experts.size(); ++e) {
      for (std::size_t b = 0; b < h.bins; ++b) {
        std::snprintf(buf, sizeof buf, "%.2f,%.2f", static_cast<double>(b) / static_cast<double>(h.bins),
                      static_cast<double>(b + 1) / static_cast<double>(h.bins));
        out << h.mode << ',' << h.dataset << ',' << h.experts[e] << ',' << buf << ',' << h.counts[e][b] << '\n';
      }
    }
  }
  return out.str();
}

std::string entropy_csv(std::span<const AttentionHistogram> hists) {
  std::ostringstream out;
  out << "mode,dataset,examples,mean_entropy\n";
  char buf[32];
  for (const auto& h : hists) {
    std::snprintf(buf, sizeof buf, "%.6f", h.mean_entropy);
    out << h.mode << ',' << h.dataset << ',' << h.examples << ',' << buf << '\n';
  }
  return out.str();
}

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

std::string histogram_svg(std::span<const AttentionHistogram> hists) {
  const double panel_w = 260, panel_h = 150, pad = 30;
  std::size_t cols = 1;
  for (const auto& h : hists) cols = std::max(cols, h.experts.size());
  const double width = pad + static_cast<double>(cols) * (panel_w + pad);
  const double height = pad + static_cast<double>(hists.size()) * (panel_h + pad);
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height)
    << "\" font-family=\"sans-serif\" font-size=\"10\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t r = 0; r < hists.size(); ++r) {
    const auto& h = hists[r];
    for (std::size_t e = 0; e < h.experts.size(); ++e) {
      const double x0 = pad + static_cast<double>(e) * (panel_w + pad);
      const double y0 = pad + static_cast<double>(r) * (panel_h + pad);
      s << "<text x=\"" << fmt(x0) << "\" y=\"" << fmt(y0 - 4) << "\">" << h.mode << " on " << h.dataset
        << ", A of " << h.experts[e] << "</text>\n";
      s << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(panel_w) << "\" height=\""
        << fmt(panel_h) << "\" fill=\"none\" stroke=\"#999\"/>\n";
      const double bw = panel_w / static_cast<double>(h.bins);
      const double top = static_cast<double>(std::max<std::size_t>(1, h.examples));
      for (std::size_t b = 0; b < h.bins; ++b) {
        const double bh = panel_h * static_cast<double>(h.counts[e][b]) / top;
        s << "<rect x=\"" << fmt(x0 + static_cast<double>(b) * bw) << "\" y=\"" << fmt(y0 + panel_h - bh)
          << "\" width=\"" << fmt(bw - 1) << "\" height=\"" << fmt(bh) << "\" fill=\"" << kPalette[e % 8] << "\"/>\n";
      }
    }
  }
  s << "</svg>\n";
  return s.str();
}

std::string cumulative_csv(std::span<const multisite::CumulativePoint> points) {
  std::ostringstream out;
  out << "method,step,cumulative_seconds\n";
  char buf[32];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.4f", p.seconds);
    out << p.method << ',' << p.step << ',' << buf << '\n';
  }
  return out.str();
}

std::string cumulative_svg(std::span<const multisite::CumulativePoint> points) {
  const double w = 520, h = 320, left = 60, bottom = 40, top = 20, right = 160;
  double max_t = 1e-9;
  int max_step = 1;
  std::vector<std::string> methods;
  for (const auto& p : points) {
    max_t = std::max(max_t, p.seconds);
    max_step = std::max(max_step, p.step);
    if (std::find(methods.begin(), methods.end(), p.method) == methods.end()) methods.push_back(p.method);
  }
  const double pw = w - left - right, ph = h - top - bottom;
  auto px = [&](int step) { return left + pw * static_cast<double>(step) / static_cast<double>(max_step); };
  auto py = [&](double t) { return top + ph * (1.0 - t / max_t); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(w) << "\" height=\"" << fmt(h)
    << "\" font-family=\"sans-serif\" font-size=\"10\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top + ph) << "\" x2=\"" << fmt(left + pw) << "\" y2=\""
    << fmt(top + ph) << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top) << "\" x2=\"" << fmt(left) << "\" y2=\"" << fmt(top + ph)
    << "\" stroke=\"black\"/>\n";
  for (int st = 0; st <= max_step; ++st)
    s << "<text x=\"" << fmt(px(st) - 3) << "\" y=\"" << fmt(top + ph + 14) << "\">" << st << "</text>\n";
  s << "<text x=\"" << fmt(left + pw / 2 - 10) << "\" y=\"" << fmt(h - 8) << "\">step</text>\n";
  s << "<text x=\"4\" y=\"" << fmt(top + 10) << "\">" << fmt(max_t) << " s</text>\n";
  for (std::size_t m = 0; m < methods.size(); ++m) {
    s << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << kPalette[m % 8] << "\" points=\"";
    for (const auto& p : points)
      if (p.method == methods[m]) s << fmt(px(p.step)) << ',' << fmt(py(p.seconds)) << ' ';
    s << "\"/>\n<text x=\"" << fmt(left + pw + 10) << "\" y=\"" << fmt(top + 14 * static_cast<double>(m + 1))
      << "\" fill=\"" << kPalette[m % 8] << "\">" << methods[m] << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string inference_csv(const multisite::InferenceTiming& t) {
  std::ostringstream out;
  char buf[96];
  out << "model,experts,seconds_per_example\n";
  std::snprintf(buf, sizeof buf, "single,1,%.9f\n", t.single);
  out << buf;
  std::snprintf(buf, sizeof buf, "fusion sequential,%zu,%.9f\n", t.experts, t.fusion_sequential);
  out << buf;
  std::snprintf(buf, sizeof buf, "fusion parallel,%zu,%.9f\n", t.experts, t.fusion_parallel);
  out << buf;
  return out.str();
}

std::string inference_svg(const multisite::InferenceTiming& t) {
  const std::pair<const char*, double> bars[] = {
      {"single", t.single}, {"fusion sequential", t.fusion_sequential}, {"fusion parallel", t.fusion_parallel}};
  double top = 1e-12;
  for (const auto& b : bars) top = std::max(top, b.second);
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"420\" height=\"140\" font-family=\"sans-serif\" "
       "font-size=\"10\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < 3; ++i) {
    const double y = 20 + 35 * static_cast<double>(i), len = 250 * bars[i].second / top;
    s << "<text x=\"4\" y=\"" << fmt(y + 14) << "\">" << bars[i].first << "</text>\n";
    s << "<rect x=\"110\" y=\"" << fmt(y) << "\" width=\"" << fmt(len) << "\" height=\"20\" fill=\"" << kPalette[i]
      << "\"/>\n";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f us", bars[i].second * 1e6);
    s << "<text x=\"" << fmt(115 + len) << "\" y=\"" << fmt(y + 14) << "\">" << buf << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<AttentionHistogram> write_attention_report(const fs::path& run_dir) {
  std::vector<AttentionHistogram> hists;
  for (const auto& [split, internal] : {std::pair{"internal", true}, std::pair{"external", false}}) {
    const auto path = run_dir / ("attention_" + std::string(split) + ".csv");
    if (!fs::exists(path)) continue;
    std::vector<std::string> experts;
    for (const auto& r : read_attention_csv(read_file(path), internal, &experts))
      hists.push_back(attention_histogram(r, experts));
  }
  if (hists.empty()) {
    throw DataError("no attention weights in " + run_dir.string() + "; evaluate a weighted fusion model first");
  }
  write_file(run_dir / "attention_hist.csv", histogram_csv(hists));
  write_file(run_dir / "attention_entropy.csv", entropy_csv(hists));
  write_file(run_dir / "attention_hist.svg", histogram_svg(hists));
  return hists;
}

std::vector<multisite::CumulativePoint> write_efficiency_report(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "timing.json")) throw DataError("no timing.json in " + run_dir.string());
  const auto timing = nlohmann::json::parse(read_file(run_dir / "timing.json")).get<multisite::TimingLog>();
  const auto points = multisite::cumulative_training(timing);
  if (points.empty()) throw DataError("timing.json holds no completed training stages");
  write_file(run_dir / "training_time.csv", cumulative_csv(points));
  write_file(run_dir / "training_time.svg", cumulative_svg(points));
  if (!fs::exists(run_dir / "inference.json")) throw DataError("no inference.json in " + run_dir.string());
  const auto inf = nlohmann::json::parse(read_file(run_dir / "inference.json")).get<multisite::InferenceTiming>();
  write_file(run_dir / "inference_time.csv", inference_csv(inf));
  write_file(run_dir / "inference_time.svg", inference_svg(inf));
  return points;
}

}  // namespace wsf::eval
