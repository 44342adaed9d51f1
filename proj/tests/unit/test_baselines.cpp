#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "wsf/baselines/baselines.hpp"
#include "wsf/common/error.hpp"
#include "wsf/data/scenario.hpp"
#include "wsf/eval/metrics.hpp"

using namespace wsf;
using namespace wsf::baselines;

namespace {

ExpertScores scores(std::vector<int> labels, std::vector<std::vector<double>> rows) {
  ExpertScores s;
  s.label_set = std::move(labels);
  s.logits = nn::Tensor({rows.size(), s.label_set.size()});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < s.label_set.size(); ++c) s.logits.at(r, c) = rows[r][c];
  return s;
}

std::vector<double> softmax_row(const nn::Tensor& t, std::size_t r) {
  const std::size_t m = t.dim(1);
  double mx = -INFINITY;
  for (std::size_t c = 0; c < m; ++c) mx = std::max(mx, t.at(r, c));
  std::vector<double> out(m);
  double s = 0;
  for (std::size_t c = 0; c < m; ++c) s += out[c] = std::exp(t.at(r, c) - mx);
  for (auto& v : out) v /= s;
  return out;
}

// Per-class maximum of a score over experts, then the smallest class with the top score.
int pooled_argmax(std::span<const ExpertScores> ex, std::size_t r, bool probabilities) {
  std::map<int, double> best;
  for (const auto& e : ex) {
    auto row = probabilities ? softmax_row(e.logits, r) : std::vector<double>(e.logits.values().begin() + r * e.label_set.size(), e.logits.values().begin() + (r + 1) * e.label_set.size());
    for (std::size_t c = 0; c < row.size(); ++c) {
      auto it = best.find(e.label_set[c]);
      if (it == best.end()) best[e.label_set[c]] = row[c];
      else it->second = std::max(it->second, row[c]);
    }
  }
  int cls = -1;
  double top = -INFINITY;
  for (auto [c, v] : best)
    if (v > top) top = v, cls = c;
  return cls;
}

int routed(std::span<const ExpertScores> ex, std::size_t r) {
  std::size_t who = 0;
  double conf = -1;
  for (std::size_t e = 0; e < ex.size(); ++e) {
    auto p = softmax_row(ex[e].logits, r);
    const double m = *std::max_element(p.begin(), p.end());
    if (m > conf) conf = m, who = e;
  }
  auto p = softmax_row(ex[who].logits, r);
  return ex[who].label_set[static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin())];
}

}  // namespace

TEST_CASE("confidence baselines equal their brute-force definitions") {
  Rng rng(17);
  std::uniform_int_distribution<int> nexp(1, 4), nlab(1, 6), cls(0, 11);
  std::normal_distribution<double> val(0.0, 2.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<ExpertScores> ex(static_cast<std::size_t>(nexp(rng)));
    const std::size_t rows = 4;
    for (auto& e : ex) {
      const int n = nlab(rng);
      while (static_cast<int>(e.label_set.size()) < n) {
        int c = cls(rng);
        if (std::find(e.label_set.begin(), e.label_set.end(), c) == e.label_set.end()) e.label_set.push_back(c);
      }
      std::sort(e.label_set.begin(), e.label_set.end());
      e.logits = nn::Tensor({rows, e.label_set.size()});
      for (auto& v : e.logits.values()) v = std::round(val(rng) * 2) / 2;
    }
    auto ml = max_logit_predict(ex);
    auto msp = msp_predict(ex);
    auto cr = confidence_route_predict(ex);
    for (std::size_t r = 0; r < rows; ++r) {
      CHECK(ml[r] == pooled_argmax(ex, r, false));
      CHECK(msp[r] == pooled_argmax(ex, r, true));
      CHECK(cr[r] == routed(ex, r));
    }
    CHECK(confidence_predict(BaselineKind::MSP, ex) == msp);
  }
}

TEST_CASE("single expert reduces to its argmax") {
  std::vector<ExpertScores> ex{scores({2, 5, 9}, {{0.1, 3.0, -1.0}, {4.0, 0.0, 4.5}})};
  std::vector<int> expected{5, 9};
  CHECK(max_logit_predict(ex) == expected);
  CHECK(msp_predict(ex) == expected);
  CHECK(confidence_route_predict(ex) == expected);
}

TEST_CASE("disjoint label sets concatenate") {
  std::vector<ExpertScores> ex{scores({0, 1}, {{1.0, 2.0}}), scores({2, 3}, {{2.5, -1.0}})};
  CHECK(max_logit_predict(ex) == std::vector<int>{2});
}

TEST_CASE("small label sets dominate softmax mass") {
  // Both experts score the shared class 0 with the same logit margin over their other
  // classes, but the 2-class expert spreads less mass and wins.
  std::vector<double> wide(10, 0.0);
  wide[0] = 2.0;
  std::vector<ExpertScores> ex{scores({0, 1}, {{2.0, 0.0}}), scores({0, 2, 3, 4, 5, 6, 7, 8, 9, 10}, {wide})};
  auto p_small = softmax_rows(ex[0].logits);
  auto p_wide = softmax_rows(ex[1].logits);
  CHECK(p_small.at(0, 0) > p_wide.at(0, 0));
  CHECK(p_small.at(0, 0) > 0.85);
  CHECK(p_wide.at(0, 0) < 0.5);
}

TEST_CASE("unqualified confident expert misroutes") {
  // True class 7 is only known by the second expert; the first is confidently wrong.
  std::vector<ExpertScores> ex{scores({0, 1}, {{9.0, 0.0}}), scores({5, 7}, {{0.0, 1.5}})};
  CHECK(confidence_route_predict(ex) == std::vector<int>{0});
}

TEST_CASE("exact ties are deterministic") {
  std::vector<ExpertScores> ex{scores({3, 4}, {{1.0, 0.0}}), scores({1, 2}, {{1.0, 0.0}})};
  CHECK(confidence_route_predict(ex) == std::vector<int>{3});
  CHECK(max_logit_predict(ex) == std::vector<int>{1});
  CHECK(msp_predict(ex) == std::vector<int>{1});
}

TEST_CASE("own head scores and names") {
  Rng rng(2);
  expert::Expert e;
  e.id = "x";
  e.model = expert::make_classifier(16, 4, {1, 3}, rng);
  nn::Tensor h({3, 4}, 0.5);
  auto s = own_head_scores(e, h);
  nn::Graph g(false);
  CHECK(s.logits.bit_equal(g.value(e.model.head.forward(g, g.constant_ref(h)))));
  CHECK(s.label_set == std::vector<int>{1, 3});
  CHECK(baseline_kind_from_string("routing") == BaselineKind::ConfidenceRouting);
  CHECK(to_string(BaselineKind::CombineRetrain) == "Combine & Retrain (oracle)");
  CHECK_THROWS(baseline_kind_from_string("vote"));
}

TEST_CASE("combine and retrain covers the union of label sets") {
  data::ScenarioConfig cfg;
  cfg.class_names = {"a", "b", "c"};
  cfg.sites = {{"s0", data::SiteRole::Base, {"a", "b"}, 4, 3, {1.0, 0.0, 0.0, 0}, 0.0},
               {"s1", data::SiteRole::Incremental, {"b", "c"}, 4, 3, {1.0, 0.0, 0.0, 0}, 0.0}};
  auto corpus = data::generate_scenario(cfg, 1);
  std::vector<PooledSite> sites;
  for (auto& s : corpus.sites) sites.push_back({&s.examples, &s.examples, s.label_subset});
  expert::TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  expert::TrainLog log;
  auto m = combine_retrain(sites, tc, 8, &log);
  CHECK(m.classes == std::vector<int>{0, 1, 2});
  CHECK(log.epoch_loss.size() == 2);
  std::vector<const data::ImageSet*> sets{&corpus.sites[0].examples, &corpus.sites[1].examples};
  CHECK(concat_images(sets).size() == 24);
}

TEST_CASE("accuracy and macro-F1") {
  std::vector<int> y{0, 1, 2, 2};
  CHECK(eval::accuracy(y, y) == 100.0);
  CHECK(eval::macro_f1(y, y) == 100.0);
  std::vector<int> other{5, 5, 5, 5};
  CHECK(eval::accuracy(y, other) == 0.0);
  CHECK(eval::macro_f1(y, other) == 0.0);
  CHECK_THROWS_AS(eval::accuracy({}, {}), DataError);

  // Class 0: tp 2, fp 1, fn 0 -> 0.8. Class 1: tp 1, fp 1, fn 1 -> 0.5. Class 2: tp 1, fp 0, fn 1 -> 2/3.
  std::vector<int> labels{0, 0, 1, 1, 2, 2};
  std::vector<int> preds{0, 0, 1, 0, 2, 1};
  CHECK(eval::accuracy(labels, preds) == doctest::Approx(400.0 / 6));
  CHECK(eval::macro_f1(labels, preds) == doctest::Approx(100.0 * (0.8 + 0.5 + 2.0 / 3) / 3));
}

TEST_CASE("metrics report") {
  eval::MetricsReport r;
  r.add({"SF", 4, eval::Transfer::Features, "a", 90.0, 80.0});
  r.add({"SF", 4, eval::Transfer::Features, "b", 70.0, 60.0});
  r.add({"X", 1, eval::Transfer::None, "a", 10.0, 10.0});
  CHECK(r.average("SF").acc == doctest::Approx(80.0));
  CHECK(r.average("SF").dataset == "Average");
  CHECK(r.methods() == std::vector<std::string>{"SF", "X"});
  const std::string csv = r.csv();
  CHECK(csv.rfind("method,experts,transfer,dataset,acc,f1\n", 0) == 0);
  auto back = eval::MetricsReport::from_csv(csv);
  CHECK(back.find("SF", "b").f1 == doctest::Approx(60.0));
  CHECK(back.average("SF").acc == doctest::Approx(80.0));
  CHECK(back.csv() == csv);
  CHECK_THROWS_AS(r.find("SF", "zzz"), DataError);
}
