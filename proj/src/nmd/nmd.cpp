#include "wsf/nmd/nmd.hpp"

#include <variant>

#include "wsf/common/error.hpp"

namespace wsf::nmd {
namespace {

// Indices of ReLU layers that directly follow a conv layer.
std::vector<std::size_t> conv_relu_taps(const nn::Sequential& enc) {
  std::vector<std::size_t> taps;
  for (std::size_t i = 1; i < enc.size(); ++i) {
    if (std::holds_alternative<nn::Relu>(enc.layer(i)) && std::holds_alternative<nn::Conv2d>(enc.layer(i - 1))) {
      taps.push_back(i);
    }
  }
  return taps;
}

void write_channel_means(const nn::Graph& g, std::span<const nn::Var> trace, std::span<const std::size_t> taps,
                         nn::Tensor& out) {
  const std::size_t n = out.dim(0), p = out.dim(1);
  std::size_t col = 0;
  for (auto t : taps) {
    const nn::Tensor& a = g.value(trace[t]);
    const std::size_t c = a.dim(1), hw = a.dim(2) * a.dim(3);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* v = a.data() + (b * c + ch) * hw;
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += v[i];
        out[b * p + col + ch] = s / static_cast<double>(hw);
      }
    }
    col += c;
  }
}

}  // namespace

std::size_t neural_mean_size(const expert::Classifier& model) {
  std::size_t p = 0;
  for (auto t : conv_relu_taps(model.encoder)) p += std::get<nn::Conv2d>(model.encoder.layer(t - 1)).out_channels();
  return p;
}

nn::Tensor neural_means(const expert::Classifier& model, const nn::Tensor& images) {
  const auto taps = conv_relu_taps(model.encoder);
  nn::Graph g(false);
  const auto trace = model.encoder.forward_trace(g, g.constant_ref(images));
  nn::Tensor out({images.dim(0), neural_mean_size(model)});
  write_channel_means(g, trace, taps, out);
  return out;
}

std::vector<double> neural_mean(const expert::Classifier& model, std::span<const double> image) {
  const std::size_t s = model.image_size();
  const nn::Tensor x({1, 1, s, s}, std::vector<double>(image.begin(), image.end()));
  const nn::Tensor m = neural_means(model, x);
  return {m.values().begin(), m.values().end()};
}

std::vector<double> reference_mean(const expert::Expert& expert, const data::ImageSet& train) {
  if (train.size() == 0) throw DataError("reference_mean: empty training set for expert '" + expert.id + "'");
  const std::size_t p = neural_mean_size(expert.model);
  std::vector<double> sum(p, 0.0);
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < train.size(); start += kChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(train.size(), start + kChunk); ++i) idx.push_back(i);
    const nn::Tensor m = neural_means(expert.model, train.batch(idx));
    for (std::size_t b = 0; b < idx.size(); ++b)
      for (std::size_t j = 0; j < p; ++j) sum[j] += m[b * p + j];
  }
  for (double& v : sum) v /= static_cast<double>(train.size());
  return sum;
}

void attach_reference_mean(expert::Expert& expert, const data::ImageSet& train) {
  expert.reference_mean = reference_mean(expert, train);
}

std::vector<double> nmd_vector(const expert::Expert& expert, std::span<const double> image) {
  if (!expert.reference_mean) throw ProtocolError("nmd_vector: expert '" + expert.id + "' has no reference mean");
  auto m = neural_mean(expert.model, image);
  for (std::size_t j = 0; j < m.size(); ++j) m[j] -= (*expert.reference_mean)[j];
  return m;
}

ExpertOutputs run_expert(const expert::Expert& expert, const nn::Tensor& images) {
  const auto& model = expert.model;
  const auto taps = conv_relu_taps(model.encoder);
  nn::Graph g(false);
  const auto trace = model.encoder.forward_trace(g, g.constant_ref(images));
  const nn::Var z = model.head.forward(g, trace.back());

  ExpertOutputs out;
  out.features = g.value(trace.back());
  out.logits = g.value(z);
  if (expert.reference_mean) {
    const std::size_t p = neural_mean_size(model);
    out.nmd = nn::Tensor({images.dim(0), p});
    write_channel_means(g, trace, taps, out.nmd);
    const auto& ref = *expert.reference_mean;
    for (std::size_t b = 0; b < images.dim(0); ++b)
      for (std::size_t j = 0; j < p; ++j) out.nmd[b * p + j] -= ref[j];
  }
  return out;
}

}  // namespace wsf::nmd
