#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "wsf/common/error.hpp"
#include "wsf/data/scenario.hpp"
#include "wsf/fusion/fusion.hpp"
#include "wsf/fusion/fusion_io.hpp"
#include "wsf/nmd/nmd.hpp"
#include "wsf/nn/weights_io.hpp"

using namespace wsf;
using namespace wsf::fusion;
using multisite::FeatureBundle;

namespace {

expert::Expert make_expert(const std::string& id, std::vector<int> classes, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  expert::Expert e;
  e.id = id;
  e.model = expert::make_classifier(16, k, std::move(classes), rng);
  e.reference_mean = std::vector<double>(nmd::neural_mean_size(e.model), 0.1);
  return e;
}

data::ImageSet toy_images(std::uint64_t seed, std::vector<std::string> classes) {
  data::ScenarioConfig cfg;
  cfg.class_names = {"a", "b", "c", "d"};
  cfg.sites = {{"s", data::SiteRole::Base, std::move(classes), 6, 4, {1.0, 0.0, 0.1, 1}, 0.02}};
  return data::generate_scenario(cfg, seed).sites[0].examples;
}

FeatureBundle make_bundle(const std::string& site, std::span<const expert::Expert> experts,
                          const data::ImageSet& images) {
  FeatureBundle b;
  b.site_id = site;
  b.feature_size = experts[0].feature_size();
  b.nmd_size = experts[0].reference_mean->size();
  b.n_aug = 1;
  b.examples = images.size();
  b.labels = images.labels;
  b.patients = images.patients;
  b.aug_index.assign(images.size(), 0);
  std::vector<nmd::ExpertOutputs> outs;
  for (const auto& e : experts) {
    b.roster.push_back(e.id);
    outs.push_back(nmd::run_expert(e, images.all()));
  }
  for (std::size_t r = 0; r < images.size(); ++r)
    for (const auto& o : outs) {
      for (std::size_t j = 0; j < b.feature_size; ++j) b.features.push_back(o.features.at(r, j));
      for (std::size_t j = 0; j < b.nmd_size; ++j) b.nmd.push_back(o.nmd.at(r, j));
    }
  return b;
}

FusionBatch random_batch(std::size_t n, std::size_t d, std::size_t k, std::size_t p, Rng& rng) {
  std::normal_distribution<double> u(0.0, 1.0);
  FusionBatch b;
  for (std::size_t e = 0; e < d; ++e) {
    nn::Tensor h({n, k}), g({n, p});
    for (auto& v : h.values()) v = u(rng);
    for (auto& v : g.values()) v = u(rng);
    b.features.push_back(h);
    b.nmd.push_back(g);
  }
  return b;
}

FusionTrainConfig quick() {
  FusionTrainConfig c;
  c.epochs = 8;
  c.batch_size = 16;
  c.learning_rate = 5e-3;
  return c;
}

bool same_block(const nn::Dense& a, const nn::Dense& b) {
  return a.weight.value.bit_equal(b.weight.value) && a.bias.value.bit_equal(b.bias.value);
}

}  // namespace

TEST_CASE("pooling map and knowledge pooler") {
  auto map = PoolingMap::build({{0, 2}, {2, 5}, {1}});
  CHECK(map.classes == std::vector<int>{0, 1, 2, 5});
  CHECK(map.width == 5);
  CHECK(map.index_of(5) == 3);
  CHECK(map.index_of(3) == -1);

  SUBCASE("duplicate class takes the maximum") {
    auto m = PoolingMap::build({{7}, {7}, {7}});
    auto z = knowledge_pool(nn::Tensor({1, 3}, {0.2, 0.9, -1.0}), m);
    CHECK(z[0] == 0.9);
  }
  SUBCASE("disjoint label sets gather") {
    auto m = PoolingMap::build({{3, 0}, {1}});
    auto z = knowledge_pool(nn::Tensor({1, 3}, {10, 20, 30}), m);
    CHECK(z.storage() == std::vector<double>{20, 30, 10});
  }
  SUBCASE("width mismatch") { CHECK_THROWS_AS(knowledge_pool(nn::Tensor({1, 4}), map), ShapeError); }
  SUBCASE("brute force") {
    Rng rng(21);
    std::uniform_int_distribution<int> nexp(1, 5), nlab(1, 6), cls(0, 9);
    std::normal_distribution<double> val(0.0, 2.0);
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<std::vector<int>> sets(static_cast<std::size_t>(nexp(rng)));
      std::vector<int> flat;
      for (auto& s : sets) {
        const int n = nlab(rng);
        while (static_cast<int>(s.size()) < n) {
          int c = cls(rng);
          if (std::find(s.begin(), s.end(), c) == s.end()) s.push_back(c);
        }
        flat.insert(flat.end(), s.begin(), s.end());
      }
      const std::size_t rows = 3;
      nn::Tensor z({rows, flat.size()});
      for (auto& v : z.values()) v = std::round(val(rng) * 4) / 4;  // coarse grid forces ties
      auto m = PoolingMap::build(sets);
      auto pooled = knowledge_pool(z, m);
      std::vector<int> uniq = flat;
      std::sort(uniq.begin(), uniq.end());
      uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
      REQUIRE(pooled.dim(1) == uniq.size());
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < uniq.size(); ++c) {
          double best = -INFINITY;
          for (std::size_t p = 0; p < flat.size(); ++p)
            if (flat[p] == uniq[c]) best = std::max(best, z.at(r, p));
          CHECK(pooled.at(r, c) == best);
        }
      // Shifting every position by a constant keeps the argmax.
      nn::Tensor shifted = z;
      for (auto& v : shifted.values()) v += 3.75;
      auto ps = knowledge_pool(shifted, m);
      for (std::size_t r = 0; r < rows; ++r) {
        auto a = pooled.values().subspan(r * uniq.size(), uniq.size());
        auto b = ps.values().subspan(r * uniq.size(), uniq.size());
        CHECK(std::max_element(a.begin(), a.end()) - a.begin() == std::max_element(b.begin(), b.end()) - b.begin());
      }
    }
  }
}

TEST_CASE("model structure") {
  std::vector<expert::Expert> ex{make_expert("a", {0, 1}, 4, 1), make_expert("b", {1, 2, 3}, 4, 2)};
  FusionModel m(FusionMode::AttnWSF, ex, 3);
  CHECK(same_block(m.cross(0, 0), ex[0].model.head));
  CHECK(same_block(m.cross(1, 1), ex[1].model.head));
  CHECK_FALSE(m.cross(0, 0).weight.trainable);
  for (double v : m.cross(0, 1).weight.value.values()) CHECK(v == 0.0);
  CHECK(m.cross(0, 1).out_features() == 3);
  CHECK(m.cross(1, 0).out_features() == 2);
  CHECK(m.attention_input_size() == 8);

  Rng rng(4);
  auto batch = random_batch(10, 2, 4, ex[0].reference_mean->size(), rng);
  auto a = attention_scores(m, attention_input(m, batch));
  for (double v : a.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));

  FusionModel nm(FusionMode::NmdWSF, ex, 3);
  CHECK(nm.attention_input_size() == 2 * ex[0].reference_mean->size());
  for (auto* p : nm.trainable_parameters()) {
    std::normal_distribution<double> u(0.0, 1.0);
    for (auto& v : p->value.values()) v = u(rng);
  }
  auto an = attention_scores(nm, attention_input(nm, batch));
  for (std::size_t r = 0; r < an.dim(0); ++r) CHECK(an.at(r, 0) + an.at(r, 1) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(attention_scores(FusionModel(FusionMode::SF, ex, 3), nn::Tensor({1, 8})), ProtocolError);
  CHECK_THROWS_AS(predict(m, batch), ProtocolError);

  auto no_ref = ex;
  no_ref[0].reference_mean.reset();
  CHECK_THROWS_AS(FusionModel(FusionMode::NmdWSF, no_ref, 3), ProtocolError);
  CHECK_NOTHROW(FusionModel(FusionMode::SF, no_ref, 3));
}

TEST_CASE("branch logits") {
  SUBCASE("single expert reduces to its own head") {
    std::vector<expert::Expert> ex{make_expert("a", {0, 2, 3}, 5, 7)};
    FusionModel m(FusionMode::SF, ex, 1);
    Rng rng(1);
    auto batch = random_batch(6, 1, 5, 24, rng);
    auto z = branch_logits(m, batch.features, nn::Tensor({6, 1}, 1.0));
    nn::Graph g(false);
    auto own = ex[0].model.head.forward(g, g.constant_ref(batch.features[0]));
    CHECK(z[0].bit_equal(g.value(own)));
  }
  SUBCASE("one-hot attention silences the other experts") {
    std::vector<expert::Expert> ex{make_expert("a", {0, 1}, 3, 1), make_expert("b", {1, 2}, 3, 2),
                                   make_expert("c", {4}, 3, 3)};
    FusionModel m(FusionMode::AttnWSF, ex, 1);
    Rng rng(2);
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t t = 0; t < 3; ++t)
        if (s != t) {
          std::normal_distribution<double> u(0.0, 1.0);
          for (auto& v : m.cross(s, t).weight.value.values()) v = u(rng);
          for (auto& v : m.cross(s, t).bias.value.values()) v = u(rng);
        }
    auto batch = random_batch(4, 3, 3, 24, rng);
    nn::Tensor a({4, 3});
    for (std::size_t r = 0; r < 4; ++r) a.at(r, 1) = 1.0;
    auto z = branch_logits(m, batch.features, a);
    for (std::size_t d = 0; d < 3; ++d) {
      nn::Graph g(false);
      const nn::Dense& w = m.cross(1, d);
      auto expected = w.forward(g, g.constant_ref(batch.features[1]));
      for (std::size_t i = 0; i < z[d].size(); ++i) CHECK(z[d][i] == doctest::Approx(g.value(expected)[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("hand-worked two-expert fusion") {
  // Expert 0 knows classes {0,1}, expert 1 knows {1,2}; k = 2.
  std::vector<expert::Expert> ex{make_expert("e0", {0, 1}, 2, 1), make_expert("e1", {1, 2}, 2, 2)};
  const double W00[2][2] = {{1, 0}, {0, 1}}, b00[2] = {0, 0};
  const double W11[2][2] = {{2, 0}, {0, -1}}, b11[2] = {0.5, 0};
  const double W01[2][2] = {{0, 1}, {1, 0}}, b01[2] = {0, 0.25};
  const double W10[2][2] = {{1, 1}, {0, 0}}, b10[2] = {-1, 0};
  auto set = [](nn::Dense& d, const double (&w)[2][2], const double (&b)[2]) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) d.weight.value.at(i, j) = w[i][j];
      d.bias.value[i] = b[i];
    }
  };
  set(ex[0].model.head, W00, b00);
  set(ex[1].model.head, W11, b11);
  FusionModel m(FusionMode::SF, ex, 1);
  set(m.cross(0, 1), W01, b01);
  set(m.cross(1, 0), W10, b10);
  m.mark_trained();

  const double h0[5][2] = {{1, 0}, {0, 1}, {2, -1}, {0.5, 0.5}, {-1, 3}};
  const double h1[5][2] = {{0, 0}, {1, 1}, {0.2, 0.1}, {3, -2}, {0, 0.5}};
  FusionBatch batch;
  batch.features = {nn::Tensor({5, 2}), nn::Tensor({5, 2})};
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t j = 0; j < 2; ++j) {
      batch.features[0].at(r, j) = h0[r][j];
      batch.features[1].at(r, j) = h1[r][j];
    }
  auto pred = predict(m, batch);
  for (std::size_t r = 0; r < 5; ++r) {
    double z0[2], z1[2];
    for (std::size_t c = 0; c < 2; ++c) {
      z0[c] = b00[c] + b10[c];
      z1[c] = b01[c] + b11[c];
      for (std::size_t j = 0; j < 2; ++j) {
        z0[c] += h0[r][j] * W00[j][c] + h1[r][j] * W10[j][c];
        z1[c] += h0[r][j] * W01[j][c] + h1[r][j] * W11[j][c];
      }
    }
    const double pooled[3] = {z0[0], std::max(z0[1], z1[0]), z1[1]};
    for (std::size_t c = 0; c < 3; ++c) CHECK(pred.pooled_logits.at(r, c) == doctest::Approx(pooled[c]).epsilon(1e-15));
    const int best = static_cast<int>(std::max_element(pooled, pooled + 3) - pooled);
    CHECK(pred.classes[r] == best);
  }
}

TEST_CASE("off-diagonal gradient matches finite differences") {
  std::vector<expert::Expert> ex{make_expert("a", {0, 1}, 3, 1), make_expert("b", {1, 2}, 3, 2)};
  for (auto mode : {FusionMode::SF, FusionMode::AttnWSF, FusionMode::NmdWSF}) {
    FusionModel m(mode, ex, 5);
    Rng rng(8);
    std::normal_distribution<double> u(0.0, 0.5);
    for (auto* p : m.trainable_parameters())
      for (auto& v : p->value.values()) v = u(rng);
    auto batch = random_batch(7, 2, 3, 24, rng);
    std::vector<int> targets{0, 1, 2, 2, 1, 0, 1};
    auto loss_at = [&] {
      nn::Graph g(false);
      const FusionModel& cm = m;
      return g.value(nn::cross_entropy(g, cm.forward(g, batch).pooled, targets))[0];
    };
    auto params = m.trainable_parameters();
    nn::zero_grad(params);
    nn::Graph g;
    g.backward(nn::cross_entropy(g, m.forward(g, batch).pooled, targets));
    for (auto [s, t] : {std::pair<std::size_t, std::size_t>{0, 1}, {1, 0}}) {
      auto& w = m.cross(s, t).weight;
      for (std::size_t i = 0; i < w.value.size(); ++i) {
        const double orig = w.value[i];
        w.value[i] = orig + 1e-5;
        const double up = loss_at();
        w.value[i] = orig - 1e-5;
        const double down = loss_at();
        w.value[i] = orig;
        const double num = (up - down) / 2e-5;
        CHECK(std::abs(num - w.grad[i]) / std::max(1e-6, std::abs(num) + std::abs(w.grad[i])) < 1e-4);
      }
    }
  }
}

TEST_CASE("training, reductions and serialization") {
  auto imgs_a = toy_images(3, {"a", "b"});
  auto imgs_b = toy_images(4, {"b", "c", "d"});
  std::vector<expert::Expert> ex{make_expert("a", {0, 1}, 6, 1), make_expert("b", {1, 2, 3}, 6, 2)};
  for (auto& e : ex) nmd::attach_reference_mean(e, e.id == "a" ? imgs_a : imgs_b);
  std::vector<FeatureBundle> train{make_bundle("a", ex, imgs_a), make_bundle("b", ex, imgs_b)};

  SUBCASE("diagonal blocks stay frozen") {
    for (auto mode : {FusionMode::SF, FusionMode::AttnWSF, FusionMode::NmdWSF}) {
      expert::TrainLog log;
      auto m = train_fusion(train, train, ex, mode, quick(), &log);
      CHECK(m.trained());
      CHECK(log.epoch_loss.size() == 8);
      CHECK(same_block(m.cross(0, 0), ex[0].model.head));
      CHECK(same_block(m.cross(1, 1), ex[1].model.head));
      bool moved = false;
      for (double v : m.cross(0, 1).weight.value.values()) moved |= v != 0.0;
      CHECK(moved);
    }
  }
  SUBCASE("single expert fusion equals the expert") {
    std::vector<expert::Expert> one{ex[1]};
    std::vector<FeatureBundle> b{make_bundle("b", one, imgs_b)};
    auto expected = expert::predict(one[0].model, imgs_b);
    for (auto mode : {FusionMode::SF, FusionMode::AttnWSF, FusionMode::NmdWSF}) {
      auto m = train_fusion(b, b, one, mode, quick());
      auto p = predict(m, collect_rows(m, b).all());
      CHECK(p.classes == expected);
      for (double v : p.attention.values()) CHECK(v == 1.0);
    }
  }
  SUBCASE("uniform attention gives the SF argmax") {
    auto sf = train_fusion(train, train, ex, FusionMode::SF, quick());
    FusionModel attn(FusionMode::AttnWSF, ex, 9);
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t t = 0; t < 2; ++t) attn.cross(s, t) = sf.cross(s, t);
    attn.mark_trained();
    attn.force_uniform_attention = true;
    auto rows = collect_rows(sf, train).all();
    CHECK(predict(attn, rows).classes == predict(sf, rows).classes);
  }
  SUBCASE("round trip") {
    for (auto mode : {FusionMode::SF, FusionMode::AttnWSF, FusionMode::NmdWSF}) {
      auto m = train_fusion(train, train, ex, mode, quick());
      auto blob = encode_fusion(m);
      auto back = decode_fusion(blob.weights, blob.sidecar);
      auto again = encode_fusion(back);
      CHECK(again.weights == blob.weights);
      CHECK(again.sidecar == blob.sidecar);
      auto rows = collect_rows(m, train).all();
      auto p1 = predict(m, rows), p2 = predict(back, rows);
      CHECK(p1.pooled_logits.bit_equal(p2.pooled_logits));
      CHECK(p1.attention.bit_equal(p2.attention));
    }
    auto dir = std::filesystem::temp_directory_path() / "wsf_fusion_test";
    std::filesystem::remove_all(dir);
    auto m = train_fusion(train, train, ex, FusionMode::NmdWSF, quick());
    save_fusion(dir, m);
    CHECK(std::filesystem::exists(dir / "fusion.json"));
    CHECK(encode_fusion(load_fusion(dir)).weights == encode_fusion(m).weights);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("bundles must cover the roster") {
    std::vector<expert::Expert> one{ex[0]};
    std::vector<FeatureBundle> partial{make_bundle("a", one, imgs_a)};
    CHECK_THROWS_AS(train_fusion(partial, partial, ex, FusionMode::SF, quick()), DataError);
    auto bad = quick();
    bad.epochs = 0;
    CHECK_THROWS_AS(train_fusion(train, train, ex, FusionMode::SF, bad), DataError);
  }
  CHECK(fusion_mode_from_string("nmd") == FusionMode::NmdWSF);
  CHECK(fusion_mode_from_string("attn-wSF") == FusionMode::AttnWSF);
  CHECK(to_string(FusionMode::SF) == "SF");
  CHECK_THROWS(fusion_mode_from_string("mean"));
}
