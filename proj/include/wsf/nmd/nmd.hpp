#pragma once

#include <span>
#include <vector>

#include "wsf/data/dataset.hpp"
#include "wsf/expert/train.hpp"

namespace wsf::nmd {

// Number of channels summed over every conv layer of the encoder (p).
std::size_t neural_mean_size(const expert::Classifier& model);

// Per-channel spatial means of each post-ReLU conv activation, concatenated in layer
// order with channels ascending; [N, p].
nn::Tensor neural_means(const expert::Classifier& model, const nn::Tensor& images);
std::vector<double> neural_mean(const expert::Classifier& model, std::span<const double> image);

// Arithmetic mean of neural_mean over every training image; stored on the expert.
std::vector<double> reference_mean(const expert::Expert& expert, const data::ImageSet& train);
void attach_reference_mean(expert::Expert& expert, const data::ImageSet& train);

// g = neural_mean(image) - reference mean. Raises ProtocolError when the expert has no reference.
std::vector<double> nmd_vector(const expert::Expert& expert, std::span<const double> image);

// Everything one forward pass of an expert yields for a batch.
struct ExpertOutputs {
  nn::Tensor features;  // h, [N, k]
  nn::Tensor nmd;       // g, [N, p]; empty when the expert has no reference mean
  nn::Tensor logits;    // own head, [N, |Y_d|]
};

ExpertOutputs run_expert(const expert::Expert& expert, const nn::Tensor& images);

}  // namespace wsf::nmd
