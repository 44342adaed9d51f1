#pragma once

#include <vector>

#include "wsf/common/rng.hpp"
#include "wsf/data/dataset.hpp"
#include "wsf/nn/layers.hpp"

namespace wsf::expert {

// conv 1->8 3x3, ReLU, maxpool, conv 8->16 3x3, ReLU, maxpool, flatten, dense->k, ReLU.
nn::Sequential make_encoder(std::size_t image_size, std::size_t feature_size, Rng& rng);

// Encoder plus linear head; head column j scores global class classes[j].
struct Classifier {
  nn::Sequential encoder;
  nn::Dense head;
  std::vector<int> classes;

  std::size_t feature_size() const { return head.in_features(); }
  std::size_t image_size() const { return encoder.example_shape().at(1); }
  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  // Local head column of a global class, or -1.
  int column_of(int global_class) const;
  void set_trainable(bool trainable);
};

Classifier make_classifier(std::size_t image_size, std::size_t feature_size, std::vector<int> classes, Rng& rng);

// Fresh Kaiming-initialized head for `classes`.
nn::Dense make_head(std::size_t feature_size, std::size_t classes, Rng& rng);

// Head logits for every image, [N, |classes|].
nn::Tensor logits(const Classifier& model, const data::ImageSet& images);
// Argmax global class per image; ties resolve to the lowest column.
std::vector<int> predict(const Classifier& model, const data::ImageSet& images);
// Fraction of correctly predicted images.
double accuracy(const Classifier& model, const data::ImageSet& images);

std::size_t argmax(std::span<const double> row);

}  // namespace wsf::expert
