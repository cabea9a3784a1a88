#pragma once

#include <filesystem>

#include "rapkit/data/dataset.hpp"
#include "rapkit/models/store.hpp"

namespace rapkit {

struct TrainOptions {
  int epochs = 24;
  int batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<int> lr_drop_epochs{16, 21};
  double lr_drop_factor = 0.5;
  double accuracy_floor = 0.60;  // held-out accuracy below this is a training failure
};

struct TrainResult {
  ModelManifest manifest;
  WeightMap weights;
};

// Seeded SGD training of a toy model; bitwise deterministic for a fixed spec
// (weight files from two runs are identical). Throws TrainingError when the
// held-out accuracy stays under the floor.
TrainResult train_toy(const ToyModelSpec& spec, const data::Dataset& train,
                      const data::Dataset& test, const TrainOptions& opts = {});

// Trains into <store_root>/<spec.name> unless a matching entry already
// exists (same spec hash); returns the entry directory.
std::filesystem::path ensure_model(const std::filesystem::path& store_root,
                                   const ToyModelSpec& spec, const data::Dataset& train,
                                   const data::Dataset& test, const TrainOptions& opts = {});

}  // namespace rapkit
