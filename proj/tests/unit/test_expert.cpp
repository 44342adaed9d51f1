#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "wsf/common/error.hpp"
#include "wsf/data/scenario.hpp"
#include "wsf/expert/expert_io.hpp"
#include "wsf/nmd/nmd.hpp"
#include "wsf/nn/weights_io.hpp"

using namespace wsf;
using namespace wsf::data;
using namespace wsf::expert;

namespace {

struct Toy {
  GlobalClassRegistry registry;
  SiteSplits base;
  SiteSplits other;
};

// Two noise-free sites: base knows {a,b}, the other {c,d}.
Toy make_toy(double noise = 0.0, int patients = 10) {
  ScenarioConfig cfg;
  cfg.class_names = {"a", "b", "c", "d"};
  cfg.sites = {{"s0", SiteRole::Base, {"a", "b"}, patients, 4, {1.0, 0.0, noise, 0}, 0.0},
               {"s1", SiteRole::Incremental, {"c", "d"}, patients, 4, {0.9, 0.05, noise, 0}, 0.0}};
  auto corpus = generate_scenario(cfg, 3);
  return {corpus.registry, split_by_patient(corpus.sites[0], cfg.split, 3),
          split_by_patient(corpus.sites[1], cfg.split, 3)};
}

TrainConfig quick(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.learning_rate = 3e-3;
  c.seed = 5;
  return c;
}

std::string weights_of(const Classifier& m) {
  auto p = m.parameters();
  return nn::encode_weights(p);
}

}  // namespace

TEST_CASE("separable toy is learned perfectly") {
  auto toy = make_toy();
  auto e = train_base("s0", toy.base.train.examples, toy.base.val.examples, toy.base.train.label_subset, quick(200), 16);
  CHECK(accuracy(e.model, toy.base.train.examples) == 1.0);
  CHECK(accuracy(e.model, toy.base.val.examples) == 1.0);
  CHECK(e.log.epoch_loss.size() == 200);
}

TEST_CASE("checkpoint and determinism") {
  auto toy = make_toy(0.25, 6);
  auto a = train_base("s0", toy.base.train.examples, toy.base.val.examples, toy.base.train.label_subset, quick(15), 8);
  auto b = train_base("s0", toy.base.train.examples, toy.base.val.examples, toy.base.train.label_subset, quick(15), 8);
  CHECK(accuracy(a.model, toy.base.val.examples) == a.log.best_val_accuracy);
  CHECK(a.log.val_accuracy.at(static_cast<std::size_t>(a.log.best_epoch)) == a.log.best_val_accuracy);
  CHECK(*std::max_element(a.log.val_accuracy.begin(), a.log.val_accuracy.end()) == a.log.best_val_accuracy);
  CHECK(weights_of(a.model) == weights_of(b.model));
  CHECK(a.log.epoch_loss == b.log.epoch_loss);
}

TEST_CASE("labels outside the head are rejected") {
  auto toy = make_toy();
  CHECK_THROWS_AS(train_base("s0", toy.other.train.examples, toy.other.val.examples, toy.base.train.label_subset,
                             quick(1), 8),
                  DataError);
  TrainConfig bad = quick(0);
  CHECK_THROWS(bad.validate());
}

TEST_CASE("fine-tuning") {
  auto toy = make_toy(0.15, 8);
  auto base = train_base("s0", toy.base.train.examples, toy.base.val.examples, toy.base.train.label_subset,
                         quick(60), 8);
  const std::string before = weights_of(base.model);

  auto same = finetune_expert(base, "again", toy.base.train.examples, toy.base.val.examples,
                              toy.base.train.label_subset, quick(60));
  CHECK(weights_of(base.model) == before);
  CHECK(same.log.best_val_accuracy >= base.log.best_val_accuracy - 0.02);

  auto ft = finetune_expert(base, "s1", toy.other.train.examples, toy.other.val.examples,
                            toy.other.train.label_subset, quick(60));
  CHECK(ft.id == "s1");
  CHECK(ft.label_set() == toy.other.train.label_subset);
  CHECK(weights_of(base.model) == before);
}

TEST_CASE("naive sequential fine-tuning") {
  auto toy = make_toy(0.0, 8);
  auto base = train_base("s0", toy.base.train.examples, toy.base.val.examples, toy.base.train.label_subset,
                         quick(30), 8);

  auto expand = finetune_naive(base.model, toy.base.train.examples, toy.base.val.examples,
                               toy.base.train.label_subset, HeadMode::Expand, quick(1));
  CHECK(expand.classes.size() == 2);
  expand = finetune_naive(expand, toy.other.train.examples, toy.other.val.examples, toy.other.train.label_subset,
                          HeadMode::Expand, quick(5));
  CHECK(expand.classes.size() == 4);
  CHECK(expand.head.out_features() == 4);

  auto constant = finetune_naive(base.model, toy.other.train.examples, toy.other.val.examples,
                                 toy.other.train.label_subset, HeadMode::Constant, quick(30));
  CHECK(constant.classes == toy.other.train.label_subset);
  for (int p : predict(constant, toy.base.test.examples))
    CHECK(std::binary_search(toy.other.train.label_subset.begin(), toy.other.train.label_subset.end(), p));
  CHECK(accuracy(constant, toy.base.test.examples) == 0.0);
}

TEST_CASE("expert files round trip") {
  auto toy = make_toy();
  auto e = train_base("s0", toy.base.train.examples, toy.base.val.examples, toy.base.train.label_subset, quick(3), 8);
  nmd::attach_reference_mean(e, toy.base.train.examples);
  auto back = from_blob(to_blob(e));
  CHECK(back.id == "s0");
  CHECK(weights_of(back.model) == weights_of(e.model));
  CHECK(*back.reference_mean == *e.reference_mean);
  CHECK(back.log.epoch_loss == e.log.epoch_loss);

  auto dir = std::filesystem::temp_directory_path() / "wsf_expert_test";
  std::filesystem::remove_all(dir);
  save_expert(dir, e);
  CHECK(to_blob(load_expert(dir, "s0")).weights == to_blob(e).weights);
  CHECK_THROWS_AS(load_expert(dir, "missing"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("neural means") {
  Rng rng(1);
  auto model = make_classifier(16, 8, {0, 1}, rng);
  auto& conv0 = std::get<nn::Conv2d>(model.encoder.layer(0));
  auto& conv1 = std::get<nn::Conv2d>(model.encoder.layer(3));
  CHECK(nmd::neural_mean_size(model) == conv0.out_channels() + conv1.out_channels());

  conv0.bias.value.fill(0.0);
  conv1.bias.value.fill(0.0);
  std::vector<double> zero(256, 0.0);
  for (double v : nmd::neural_mean(model, zero)) CHECK(v == 0.0);

  conv0.weight.value.fill(1.0);
  std::vector<double> flat(256, 0.3);
  auto m = nmd::neural_mean(model, flat);
  for (std::size_t c = 0; c < conv0.out_channels(); ++c) CHECK(m[c] == doctest::Approx(9 * 0.3));

  Rng r2(4);
  auto random_model = make_classifier(16, 8, {0, 1}, r2);
  auto img = class_template(16, 4, 9, 2);
  auto perm = img;
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[0], perm[100]);
  CHECK(nmd::neural_mean(random_model, img) != nmd::neural_mean(random_model, perm));
}

TEST_CASE("reference mean and discrepancy") {
  auto toy = make_toy(0.1, 6);
  auto e = train_base("s0", toy.base.train.examples, toy.base.val.examples, toy.base.train.label_subset, quick(3), 8);
  const auto& train = toy.base.train.examples;
  CHECK_THROWS_AS(nmd::nmd_vector(e, train.image(0)), ProtocolError);

  std::vector<std::size_t> first{0};
  auto one = train.subset(first);
  CHECK(nmd::reference_mean(e, one) == nmd::neural_mean(e.model, train.image(0)));

  auto ref = nmd::reference_mean(e, train);
  std::vector<std::size_t> twice;
  for (std::size_t i = 0; i < train.size(); ++i) twice.insert(twice.end(), {i, i});
  auto dup = nmd::reference_mean(e, train.subset(twice));
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(dup[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  std::vector<long double> acc(ref.size(), 0.0L);
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto m = nmd::neural_mean(e.model, train.image(i));
    for (std::size_t j = 0; j < m.size(); ++j) acc[j] += m[j];
  }
  for (std::size_t j = 0; j < ref.size(); ++j)
    CHECK(ref[j] == doctest::Approx(static_cast<double>(acc[j] / train.size())).epsilon(1e-12));

  nmd::attach_reference_mean(e, one);
  for (double v : nmd::nmd_vector(e, train.image(0))) CHECK(v == 0.0);

  nmd::attach_reference_mean(e, train);
  std::vector<double> mean_g(ref.size(), 0.0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto g = nmd::nmd_vector(e, train.image(i));
    for (std::size_t j = 0; j < g.size(); ++j) mean_g[j] += g[j] / static_cast<double>(train.size());
  }
  for (double v : mean_g) CHECK(std::abs(v) < 1e-9);

  auto out = nmd::run_expert(e, train.all());
  CHECK(out.features.shape() == nn::Shape{train.size(), 8});
  CHECK(out.nmd.shape() == nn::Shape{train.size(), ref.size()});
  CHECK(out.logits.shape() == nn::Shape{train.size(), 2});
}
