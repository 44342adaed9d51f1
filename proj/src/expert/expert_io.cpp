#include "wsf/expert/expert_io.hpp"

#include "wsf/common/binary_io.hpp"
#include "wsf/common/error.hpp"
#include "wsf/nmd/nmd.hpp"
#include "wsf/nn/weights_io.hpp"

namespace wsf::expert {

namespace {

Classifier skeleton(std::size_t image_size, std::size_t k, std::vector<int> classes) {
  Rng rng(0);
  return make_classifier(image_size, k, std::move(classes), rng);
}

std::string encode_params(const Classifier& model) {
  auto ps = model.parameters();
  return nn::encode_weights(ps);
}

nlohmann::json classifier_json(const Classifier& model) {
  return {{"label_set", model.classes},
          {"image_size", model.image_size()},
          {"feature_size", model.feature_size()},
          {"nmd_size", nmd::neural_mean_size(model)}};
}

Classifier classifier_from(const nlohmann::json& j, std::string_view weights) {
  Classifier c = skeleton(j.at("image_size").get<std::size_t>(), j.at("feature_size").get<std::size_t>(),
                          j.at("label_set").get<std::vector<int>>());
  auto ps = c.parameters();
  nn::assign_weights(ps, nn::decode_weights(weights));
  return c;
}

}  // namespace

ModelBlob to_blob(const Expert& expert) {
  nlohmann::json j = classifier_json(expert.model);
  j["id"] = expert.id;
  j["reference_mean"] = expert.reference_mean ? nlohmann::json(*expert.reference_mean) : nlohmann::json(nullptr);
  j["train_log"] = expert.log;
  j["train_log"].erase("seconds");  // wall-clock time stays with the run's timing log
  return {encode_params(expert.model), j.dump()};
}

Expert from_blob(const ModelBlob& blob) {
  const auto j = nlohmann::json::parse(blob.sidecar);
  Expert e;
  e.id = j.at("id").get<std::string>();
  e.model = classifier_from(j, blob.weights);
  if (!j.at("reference_mean").is_null()) {
    e.reference_mean = j.at("reference_mean").get<std::vector<double>>();
    if (e.reference_mean->size() != nmd::neural_mean_size(e.model)) {
      throw DataError("expert '" + e.id + "': reference mean length does not match the encoder");
    }
  }
  e.log = j.at("train_log").get<TrainLog>();
  return e;
}

void save_expert(const std::filesystem::path& dir, const Expert& expert) {
  const auto blob = to_blob(expert);
  write_file(dir / ("expert_" + expert.id + ".efw"), blob.weights);
  write_file(dir / ("expert_" + expert.id + ".json"), nlohmann::json::parse(blob.sidecar).dump(2));
}

Expert load_expert(const std::filesystem::path& dir, const std::string& id) {
  ModelBlob blob{read_file(dir / ("expert_" + id + ".efw")),
                 nlohmann::json::parse(read_file(dir / ("expert_" + id + ".json"))).dump()};
  return from_blob(blob);
}

void save_classifier(const std::filesystem::path& dir, const std::string& name, const Classifier& model) {
  write_file(dir / (name + ".efw"), encode_params(model));
  write_file(dir / (name + ".json"), classifier_json(model).dump(2));
}

Classifier load_classifier(const std::filesystem::path& dir, const std::string& name) {
  return classifier_from(nlohmann::json::parse(read_file(dir / (name + ".json"))), read_file(dir / (name + ".efw")));
}

}  // namespace wsf::expert
