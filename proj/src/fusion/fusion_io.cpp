#include "wsf/fusion/fusion_io.hpp"

#include "json.hpp"

#include "wsf/common/binary_io.hpp"
#include "wsf/common/error.hpp"
#include "wsf/nn/weights_io.hpp"

namespace wsf::fusion {

FusionBlob encode_fusion(const FusionModel& model) {
  nlohmann::json experts = nlohmann::json::array();
  for (const auto& e : model.experts()) {
    experts.push_back({{"id", e.id}, {"label_set", e.label_set}, {"feature_size", e.feature_size}, {"nmd_size", e.nmd_size}});
  }
  nlohmann::json pooling = nlohmann::json::array();
  for (std::size_t c = 0; c < model.pooling().classes.size(); ++c) {
    pooling.push_back({{"class", model.pooling().classes[c]}, {"positions", model.pooling().positions[c]}});
  }
  std::size_t hidden = 0;
  if (model.attention_net()) hidden = std::get<nn::Dense>(model.attention_net()->layer(0)).out_features();
  nlohmann::json j = {{"mode", to_string(model.mode())},
                      {"experts", experts},
                      {"pooling", pooling},
                      {"attention_input_size", model.weighted() ? model.attention_input_size() : 0},
                      {"attention_hidden", hidden},
                      {"trained", model.trained()}};
  const auto ps = model.parameters();
  return {nn::encode_weights(ps), j.dump()};
}

FusionModel decode_fusion(std::string_view weights, std::string_view sidecar) {
  const auto j = nlohmann::json::parse(sidecar);
  FusionModel m;
  m.mode_ = fusion_mode_from_string(j.at("mode").get<std::string>());
  std::vector<std::vector<int>> sets;
  for (const auto& e : j.at("experts")) {
    ExpertSlot s{e.at("id").get<std::string>(), e.at("label_set").get<std::vector<int>>(),
                 e.at("feature_size").get<std::size_t>(), e.at("nmd_size").get<std::size_t>()};
    sets.push_back(s.label_set);
    m.experts_.push_back(std::move(s));
  }
  if (m.experts_.empty()) throw DataError("fusion model has no experts");
  m.pooling_ = PoolingMap::build(sets);
  const std::size_t d = m.experts_.size();
  m.cross_.resize(d);
  for (std::size_t src = 0; src < d; ++src)
    for (std::size_t dst = 0; dst < d; ++dst) {
      m.cross_[src].push_back(nn::Dense::zeros(m.experts_[src].feature_size, m.experts_[dst].label_set.size()));
      if (src == dst) {
        m.cross_[src].back().weight.trainable = false;
        m.cross_[src].back().bias.trainable = false;
      }
    }
  if (m.weighted()) {
    const auto hidden = j.at("attention_hidden").get<std::size_t>();
    nn::Sequential net;
    net.add(nn::Dense::zeros(m.attention_input_size(), hidden))
        .add(nn::Relu{})
        .add(nn::Dense::zeros(hidden, hidden))
        .add(nn::Relu{})
        .add(nn::Dense::zeros(hidden, d))
        .add(nn::Softmax{});
    m.attention_ = std::move(net);
  }
  m.name_parameters();
  auto ps = m.parameters();
  nn::assign_weights(ps, nn::decode_weights(weights));
  m.trained_ = j.value("trained", false);
  return m;
}

void save_fusion(const std::filesystem::path& dir, const FusionModel& model) {
  const auto blob = encode_fusion(model);
  write_file(dir / "fusion.efw", blob.weights);
  write_file(dir / "fusion.json", nlohmann::json::parse(blob.sidecar).dump(2));
}

FusionModel load_fusion(const std::filesystem::path& dir) {
  return decode_fusion(read_file(dir / "fusion.efw"), read_file(dir / "fusion.json"));
}

}  // namespace wsf::fusion
