#include "wsf/expert/classifier.hpp"

#include <algorithm>

namespace wsf::expert {

namespace {
constexpr std::size_t kInferenceChunk = 256;
}

nn::Sequential make_encoder(std::size_t image_size, std::size_t feature_size, Rng& rng) {
  nn::Sequential enc({1, image_size, image_size});
  const std::size_t s1 = (image_size - 2) / 2;
  const std::size_t s2 = (s1 - 2) / 2;
  enc.add(nn::Conv2d(1, 8, 3, rng))
      .add(nn::Relu{})
      .add(nn::MaxPool2{})
      .add(nn::Conv2d(8, 16, 3, rng))
      .add(nn::Relu{})
      .add(nn::MaxPool2{})
      .add(nn::Flatten{})
      .add(nn::Dense(16 * s2 * s2, feature_size, rng))
      .add(nn::Relu{});
  enc.assign_names("encoder.");
  return enc;
}

nn::Dense make_head(std::size_t feature_size, std::size_t classes, Rng& rng) {
  nn::Dense head(feature_size, classes, rng);
  head.weight.name = "head.weight";
  head.bias.name = "head.bias";
  return head;
}

Classifier make_classifier(std::size_t image_size, std::size_t feature_size, std::vector<int> classes, Rng& rng) {
  Classifier c;
  c.encoder = make_encoder(image_size, feature_size, rng);
  c.head = make_head(feature_size, classes.size(), rng);
  c.classes = std::move(classes);
  return c;
}

std::vector<nn::Parameter*> Classifier::parameters() {
  auto ps = encoder.parameters();
  ps.push_back(&head.weight);
  ps.push_back(&head.bias);
  return ps;
}

std::vector<const nn::Parameter*> Classifier::parameters() const {
  auto ps = const_cast<Classifier*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

int Classifier::column_of(int global_class) const {
  auto it = std::find(classes.begin(), classes.end(), global_class);
  return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
}

void Classifier::set_trainable(bool trainable) {
  for (auto* p : parameters()) p->trainable = trainable;
}

nn::Tensor logits(const Classifier& model, const data::ImageSet& images) {
  const std::size_t n = images.size(), m = model.classes.size();
  nn::Tensor out({n, m});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += kInferenceChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(n, start + kInferenceChunk); ++i) idx.push_back(i);
    const nn::Tensor batch = images.batch(idx);
    nn::Graph g(false);
    const nn::Var h = model.encoder.forward(g, g.constant_ref(batch));
    const nn::Var z = model.head.forward(g, h);
    const nn::Tensor& zt = g.value(z);
    std::copy(zt.data(), zt.data() + zt.size(), out.data() + start * m);
  }
  return out;
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::vector<int> predict(const Classifier& model, const data::ImageSet& images) {
  const nn::Tensor z = logits(model, images);
  const std::size_t m = model.classes.size();
  std::vector<int> out(images.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = model.classes[argmax(z.values().subspan(i * m, m))];
  }
  return out;
}

double accuracy(const Classifier& model, const data::ImageSet& images) {
  if (images.size() == 0) return 0.0;
  const auto pred = predict(model, images);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == images.labels[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

}  // namespace wsf::expert
