#pragma once

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rapkit/attack.hpp"
#include "rapkit/data/synthetic.hpp"
#include "rapkit/models/remote.hpp"
#include "rapkit/models/store.hpp"

namespace rapkit::config {

struct DatasetSection {
  enum class Kind { synthetic, csv } kind = Kind::synthetic;
  // synthetic
  data::SyntheticDatasetSpec synthetic;
  std::size_t count = 200;
  std::int64_t start = 0;
  // csv
  std::filesystem::path root;
  std::filesystem::path index;
};

struct ModelsSection {
  std::filesystem::path store = "models";
  std::vector<std::string> surrogates;
  std::vector<std::string> targets;
  bool ensemble_surrogate = false;  // average the surrogates' logits into one handle
};

enum class RapMode { off, rap, rap_ls };

std::string to_string(RapMode m);

struct RecipeSection {
  std::string name;
  RapMode rap = RapMode::off;
  std::vector<InputTransform> input_transforms;
  std::vector<GradTransform> grad_transforms;
  std::optional<double> epsilon_n;  // per-recipe override
};

struct AblateSection {
  std::string axis = "epsilon_n";  // epsilon_n | T | K_LS
  std::vector<double> values;      // integral for T / K_LS
  bool coupled_step = false;       // alpha_n = epsilon_n / T exactly
  std::string recipe;              // name from recipes; empty = first
};

struct FlatnessSection {
  std::vector<double> magnitudes;  // default 11 points in [0, 16/255]
  int n_directions = 20;
  bool through_pipeline = false;
  std::size_t images = 100;  // profile the first N dataset images
};

struct RemoteSection {
  RemoteClassifierSpec spec;
  std::map<std::string, int> label_map;
};

struct TrainEntry {
  ToyModelSpec spec;
  std::size_t train_images = 3000;
  std::size_t test_images = 600;
  int epochs = 24;
  double lr = 0.05;
  double accuracy_floor = 0.60;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds;  // defaults to {seed}
  std::filesystem::path output_dir = "out";
  int workers = 0;  // 0 = auto
  std::size_t batch_size = 50;

  DatasetSection dataset;
  ModelsSection models;
  RAPConfig attack;
  std::vector<RecipeSection> recipes;
  std::optional<AblateSection> ablate;
  FlatnessSection flatness;
  std::optional<RemoteSection> remote;
  std::vector<ToyModelSpec> train;

  nlohmann::json to_json() const;           // normalized (defaults materialized)
  std::string config_hash() const;          // hash of the canonical dump
  RAPConfig recipe_config(const RecipeSection& r) const;
  PipelineSpec recipe_pipeline(const RecipeSection& r) const;
};

// Strict parse: unknown keys anywhere are rejected, ranges are validated.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

// Applies one `path.to.key=value` override onto raw JSON (scalars only).
void apply_override(nlohmann::json& j, const std::string& assignment);

// descriptor (de)serialization, names: identity, di{prob}, ti{kernel_size},
// si{m}, admix{m1,m2,eta}, eot{n_samples,inner}, mi{mu}
nlohmann::json transform_to_json(const InputTransform& t);
InputTransform transform_from_json(const nlohmann::json& j);
nlohmann::json grad_transform_to_json(const GradTransform& t);
GradTransform grad_transform_from_json(const nlohmann::json& j);

}  // namespace rapkit::config
