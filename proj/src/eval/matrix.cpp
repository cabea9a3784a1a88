#include "rapkit/eval/matrix.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "rapkit/eval/metrics.hpp"
#include "rapkit/rng.hpp"
#include "rapkit/util/hash.hpp"

namespace rapkit::eval {

using nlohmann::json;

namespace {

std::string format_rate(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", rate);
  return buf;
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc | std::ios::binary);
    if (!os) throw InvalidInput("cannot write " + tmp);
    os << content;
  }
  std::filesystem::rename(tmp, path);
}

std::string group_key(const std::string& surrogate, const std::string& recipe) {
  return surrogate + "/" + recipe;
}

}  // namespace

void write_results_csv(const std::filesystem::path& path,
                       const std::vector<ResultCell>& cells) {
  std::ostringstream os;
  os << "surrogate,target,recipe,checkpoint,mode,rate,n\n";
  for (const auto& c : cells)
    os << c.surrogate << ',' << c.target << ',' << c.recipe << ',' << c.checkpoint << ','
       << to_string(c.mode) << ',' << format_rate(c.rate) << ',' << c.n << '\n';
  atomic_write(path, os.str());
}

std::vector<ResultCell> read_results_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot read " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "surrogate,target,recipe,checkpoint,mode,rate,n")
    throw InvalidInput("unexpected results CSV header in " + path.string());
  std::vector<ResultCell> cells;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    ResultCell c;
    std::getline(ss, c.surrogate, ',');
    std::getline(ss, c.target, ',');
    std::getline(ss, c.recipe, ',');
    std::getline(ss, field, ',');
    c.checkpoint = std::stoi(field);
    std::getline(ss, field, ',');
    c.mode = field == "targeted" ? AttackMode::targeted : AttackMode::untargeted;
    std::getline(ss, field, ',');
    c.rate = std::stod(field);
    std::getline(ss, field, ',');
    c.n = std::stoi(field);
    cells.push_back(std::move(c));
  }
  return cells;
}

ResultMatrix run_matrix(const std::vector<NamedModel>& surrogates,
                        const std::vector<NamedModel>& targets,
                        const std::vector<AttackRecipe>& recipes,
                        const data::Dataset& dataset, const MatrixOptions& options) {
  if (surrogates.empty() || targets.empty() || recipes.empty())
    throw InvalidConfig("matrix needs at least one surrogate, target and recipe");
  if (dataset.empty()) throw InvalidConfig("matrix needs a nonempty dataset");
  if (options.batch_size < 1) throw InvalidConfig("batch size must be >= 1");
  if (options.seeds.empty()) throw InvalidConfig("matrix needs at least one seed");
  for (const auto& r : recipes) {
    r.config.validate();
    r.pipeline.validate();
    if (r.config.checkpoints.empty())
      throw InvalidConfig("recipe '" + r.name + "' has no checkpoints");
  }

  ResultMatrix out;
  out.seeds = options.seeds;
  out.config_hash = options.config_hash;

  // resume: load prior cells when the manifest hash matches
  std::map<std::string, ResultCell> existing;  // key -> cell
  const bool persist = !options.output_dir.empty();
  const auto results_path = options.output_dir / "results.csv";
  const auto manifest_path = options.output_dir / "manifest.json";
  if (persist && std::filesystem::exists(results_path) &&
      std::filesystem::exists(manifest_path)) {
    try {
      json manifest;
      std::ifstream(manifest_path) >> manifest;
      if (manifest.value("config_hash", "") == options.config_hash) {
        for (auto& c : read_results_csv(results_path)) {
          const std::string key = c.surrogate + "|" + c.target + "|" + c.recipe + "|" +
                                  std::to_string(c.checkpoint);
          existing.emplace(key, std::move(c));
        }
      }
    } catch (const std::exception&) {
      existing.clear();  // unreadable prior state; recompute everything
    }
  }

  const int n_images = int(dataset.size());
  for (const auto& surrogate : surrogates) {
    for (const auto& recipe : recipes) {
      // a group is one (surrogate, recipe) attack over the dataset
      bool complete = !existing.empty();
      for (const auto& target : targets)
        for (const int cp : recipe.config.checkpoints) {
          const std::string key = surrogate.name + "|" + target.name + "|" + recipe.name +
                                  "|" + std::to_string(cp);
          complete = complete && existing.count(key) > 0;
        }
      if (complete) {
        for (const int cp : recipe.config.checkpoints)
          for (const auto& target : targets)
            out.cells.push_back(existing.at(surrogate.name + "|" + target.name + "|" +
                                            recipe.name + "|" + std::to_string(cp)));
        continue;
      }

      out.computed_groups.push_back(group_key(surrogate.name, recipe.name));
      try {
        // per-checkpoint success accumulated over seeds
        std::map<int, std::map<std::string, double>> rate_sums;  // cp -> target -> sum
        for (const std::uint64_t seed : options.seeds) {
          const std::uint64_t run_seed = derive_seed(
              seed, {fnv1a64(surrogate.name), fnv1a64(recipe.name)});

          // collect checkpoint snapshots across batches
          std::map<int, Tensor<float>> snapshots;
          for (const int cp : recipe.config.checkpoints) {
            const auto shape = dataset.image_shape();
            snapshots.emplace(cp, Tensor<float>({dataset.size(), shape[0], shape[1],
                                                 shape[2]}));
          }
          std::vector<int> labels(dataset.size());

          for (std::size_t start = 0; start < dataset.size();
               start += options.batch_size) {
            const auto batch = dataset.batch(start, options.batch_size);
            const auto trace =
                rap_attack(*surrogate.model, batch, recipe.pipeline, recipe.config, run_seed);
            out.measured_passes += trace.passes.forward;
            if (trace.checkpoint_iters != recipe.config.checkpoints)
              throw std::runtime_error("missing checkpoint snapshots in trace");
            for (std::size_t ci = 0; ci < trace.checkpoint_iters.size(); ++ci) {
              auto& dst = snapshots.at(trace.checkpoint_iters[ci]);
              for (std::size_t i = 0; i < batch.size(); ++i) {
                const auto src = trace.checkpoint_batches[ci].image(i);
                std::copy(src.begin(), src.end(), dst.image(start + i).begin());
              }
            }
            const auto batch_labels =
                recipe.config.loss.targeted() ? batch.target_labels : batch.labels;
            for (std::size_t i = 0; i < batch.size(); ++i)
              labels[start + i] = batch_labels[i];
            out.expected_passes +=
                expected_pass_count(recipe.config, recipe.pipeline.multiplicity());
          }

          for (const auto& [cp, adv] : snapshots)
            for (const auto& target : targets)
              rate_sums[cp][target.name] +=
                  success_rate(*target.model, adv, labels, recipe.config.loss.mode);
        }

        for (const int cp : recipe.config.checkpoints)
          for (const auto& target : targets) {
            ResultCell cell;
            cell.surrogate = surrogate.name;
            cell.target = target.name;
            cell.recipe = recipe.name;
            cell.checkpoint = cp;
            cell.mode = recipe.config.loss.mode;
            cell.rate = rate_sums.at(cp).at(target.name) / double(options.seeds.size());
            cell.n = n_images;
            out.cells.push_back(std::move(cell));
          }
      } catch (const std::exception& e) {
        out.failures.push_back({surrogate.name, recipe.name, e.what()});
      }
    }
  }

  if (persist) {
    std::filesystem::create_directories(options.output_dir);
    // deterministic cell order: surrogate, recipe, target, checkpoint as produced
    write_results_csv(results_path, out.cells);
    json manifest{{"config_hash", options.config_hash},
                  {"seeds", options.seeds},
                  {"images", n_images},
                  {"measured_passes", out.measured_passes},
                  {"expected_passes", out.expected_passes},
                  {"computed_groups", out.computed_groups}};
    if (!out.failures.empty()) {
      json fl = json::array();
      for (const auto& f : out.failures)
        fl.push_back({{"surrogate", f.surrogate}, {"recipe", f.recipe}, {"error", f.error}});
      manifest["failures"] = fl;
    }
    atomic_write(manifest_path, manifest.dump(2) + "\n");
  }
  return out;
}

}  // namespace rapkit::eval
