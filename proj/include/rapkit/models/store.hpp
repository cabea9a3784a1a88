#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "rapkit/models/toy.hpp"

namespace rapkit {

// Desk-scale stand-in for the paper-style model zoo: seeded trainable
// MLP / small-CNN pairs. Two specs differing only in seed are distinct
// surrogate/target models.
struct ToyModelSpec {
  std::string name;  // store entry name
  ModelArch architecture = ModelArch::small_cnn;
  std::vector<int> mlp_hidden{128, 64};
  SmallCnnShape cnn{};
  int num_classes = 10;
  std::array<std::size_t, 3> input_shape{3, 32, 32};
  std::uint64_t training_seed = 1;
  std::string dataset_id;

  void validate() const;
  std::string canonical_json() const;
  std::string spec_hash() const;
};

struct ModelManifest {
  ToyModelSpec spec;
  Preprocessing preprocessing;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::string weight_file = "weights.bin";
  int format_version = 1;
};

struct StoredModel {
  ModelManifest manifest;
  WeightMap weights;
};

// Directory-per-model store: <dir>/manifest.json + <dir>/weights.bin.
void save_model(const std::filesystem::path& dir, const ModelManifest& manifest,
                const WeightMap& weights);
StoredModel load_model(const std::filesystem::path& dir);
bool model_exists(const std::filesystem::path& dir);

void write_weights(const std::filesystem::path& file, const WeightMap& weights);
WeightMap read_weights(const std::filesystem::path& file);

// Builds the typed model for a stored entry.
template <typename T>
std::shared_ptr<Model<T>> instantiate_model(const ModelManifest& manifest,
                                            const WeightMap& weights) {
  if (manifest.spec.architecture == ModelArch::mlp) {
    auto m = std::make_shared<MlpModel<T>>(manifest.spec.input_shape,
                                           manifest.spec.num_classes,
                                           manifest.spec.mlp_hidden, manifest.preprocessing);
    m->import_weights(weights);
    return m;
  }
  auto m = std::make_shared<SmallCnnModel<T>>(manifest.spec.input_shape,
                                              manifest.spec.num_classes, manifest.spec.cnn,
                                              manifest.preprocessing);
  m->import_weights(weights);
  return m;
}

template <typename T>
std::shared_ptr<Model<T>> load_typed_model(const std::filesystem::path& dir) {
  const auto stored = load_model(dir);
  return instantiate_model<T>(stored.manifest, stored.weights);
}

}  // namespace rapkit
