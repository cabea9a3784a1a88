#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "rapkit/attack.hpp"
#include "rapkit/data/dataset.hpp"
#include "rapkit/model.hpp"

namespace rapkit::eval {

// A named attack configuration: the pipeline the recipe composes and the
// full optimization config (degenerate inner stage for plain baselines).
struct AttackRecipe {
  std::string name;
  PipelineSpec pipeline;
  RAPConfig config;
};

struct NamedModel {
  std::string name;
  std::shared_ptr<const Model<float>> model;
};

struct MatrixOptions {
  std::size_t batch_size = 50;
  std::vector<std::uint64_t> seeds{1};
  std::string config_hash;  // stamped into the manifest; guards resumes
  std::filesystem::path output_dir;  // empty = in-memory only (no persistence)
};

struct ResultCell {
  std::string surrogate;
  std::string target;
  std::string recipe;
  int checkpoint = 0;
  AttackMode mode = AttackMode::untargeted;
  double rate = 0.0;  // percent, averaged over seeds
  int n = 0;          // images per cell
};

struct CellFailure {
  std::string surrogate;
  std::string recipe;
  std::string error;
};

struct ResultMatrix {
  std::vector<ResultCell> cells;
  std::vector<CellFailure> failures;
  std::int64_t measured_passes = 0;
  std::int64_t expected_passes = 0;
  std::vector<std::uint64_t> seeds;
  std::string config_hash;
  // groups actually attacked in this invocation (resume skips complete ones)
  std::vector<std::string> computed_groups;
};

// Runs every (surrogate, recipe) attack over the dataset with checkpoint
// snapshots and scores every (target, checkpoint) cell. Deterministic given
// (dataset, seeds, configs). With an output_dir, results.csv and
// manifest.json are written atomically and a rerun with the same config hash
// recomputes only groups with missing cells.
ResultMatrix run_matrix(const std::vector<NamedModel>& surrogates,
                        const std::vector<NamedModel>& targets,
                        const std::vector<AttackRecipe>& recipes,
                        const data::Dataset& dataset, const MatrixOptions& options);

// Long-form CSV: surrogate,target,recipe,checkpoint,mode,rate,n
void write_results_csv(const std::filesystem::path& path,
                       const std::vector<ResultCell>& cells);
std::vector<ResultCell> read_results_csv(const std::filesystem::path& path);

}  // namespace rapkit::eval
