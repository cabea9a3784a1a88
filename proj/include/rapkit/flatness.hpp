#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rapkit/errors.hpp"
#include "rapkit/loss.hpp"
#include "rapkit/model.hpp"
#include "rapkit/pipeline.hpp"
#include "rapkit/rng.hpp"
#include "rapkit/tensor.hpp"

namespace rapkit {

// Gaussian draw normalized to unit L2 over the whole CHW tensor.
template <typename T>
Tensor<T> sample_direction(const std::array<std::size_t, 3>& shape_chw, Rng& rng) {
  Tensor<T> d({shape_chw[0], shape_chw[1], shape_chw[2]});
  if (d.size() == 0) throw InvalidInput("direction shape must be nonempty");
  for (;;) {
    double norm_sq = 0.0;
    for (auto& v : d.span()) {
      const double g = rng.normal();
      v = static_cast<T>(g);
      norm_sq += g * g;
    }
    if (norm_sq > 0.0) {  // an all-zero draw has probability zero; redraw
      const T inv = static_cast<T>(1.0 / std::sqrt(norm_sq));
      for (auto& v : d.span()) v *= inv;
      return d;
    }
  }
}

// Loss deltas along random unit directions, per image: for direction d and
// magnitude a, f(a) = L(x_adv + a*d) - L(x_adv), averaged over n_directions
// independent d per image. By default the probe evaluates the raw input; a
// pipeline's input transforms can optionally be applied at both points.
template <typename T>
struct FlatnessProfile {
  std::vector<double> magnitudes;
  Tensor<T> per_image;     // N x |magnitudes|, mean over directions
  std::vector<T> mean;     // batch mean per magnitude
  int n_directions = 0;
  std::uint64_t seed = 0;
  std::vector<std::int64_t> image_ids;

  // trapezoid area under the per-image curve
  T area_under(std::size_t image) const {
    T area = 0;
    for (std::size_t a = 1; a < magnitudes.size(); ++a)
      area += static_cast<T>(0.5 * (magnitudes[a] - magnitudes[a - 1])) *
              (per_image.at(image, a) + per_image.at(image, a - 1));
    return area;
  }
  T mean_area_under() const {
    if (per_image.dim(0) == 0) return T(0);
    T s = 0;
    for (std::size_t i = 0; i < per_image.dim(0); ++i) s += area_under(i);
    return s / static_cast<T>(per_image.dim(0));
  }
};

template <typename T>
FlatnessProfile<T> flatness_profile(const Model<T>& model, const ImageBatch<T>& batch,
                                    LossSpec spec, std::span<const double> magnitudes,
                                    int n_directions, std::uint64_t seed,
                                    const std::vector<InputTransform>* through = nullptr) {
  batch.validate();
  model.check_batch_shape(batch.pixels);
  if (n_directions < 1) throw InvalidConfig("n_directions must be >= 1");
  bool has_zero = false;
  for (double a : magnitudes) has_zero = has_zero || a == 0.0;
  if (magnitudes.empty() || !has_zero)
    throw InvalidConfig("magnitude grid must include 0");

  const auto labels = attack_labels(batch, spec);
  const std::size_t n = batch.size();
  const std::size_t n_mags = magnitudes.size();
  const auto shape = model.input_shape();

  auto probe_loss = [&](const Tensor<T>& probe_batch, std::span<const int> probe_labels,
                        std::int64_t image_id) {
    Tensor<T> evaluated = probe_batch;
    if (through && !through->empty()) {
      // identity randomness per probe point: profile a fixed draw of G
      std::vector<std::int64_t> ids(probe_batch.dim(0), image_id);
      const TransformContext ctx{seed, 0, ids};
      auto copies = expand_input_transforms(*through, probe_batch, ctx);
      evaluated = std::move(copies.front().value);
    }
    return per_example_loss(model.forward(evaluated), probe_labels, spec);
  };

  FlatnessProfile<T> prof;
  prof.magnitudes.assign(magnitudes.begin(), magnitudes.end());
  prof.per_image = Tensor<T>({n, n_mags});
  prof.n_directions = n_directions;
  prof.seed = seed;
  prof.image_ids = batch.image_ids;

  for (std::size_t i = 0; i < n; ++i) {
    // evaluate all (direction, magnitude) probes of one image as one batch
    Tensor<T> probes({std::size_t(n_directions) * n_mags, shape[0], shape[1], shape[2]});
    const auto xi = batch.pixels.image(i);
    for (int j = 0; j < n_directions; ++j) {
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(batch.image_ids[i]),
                                 static_cast<std::uint64_t>(j)}));
      const Tensor<T> dir = sample_direction<T>(shape, rng);
      for (std::size_t a = 0; a < n_mags; ++a) {
        auto row = probes.image(std::size_t(j) * n_mags + a);
        const T mag = static_cast<T>(magnitudes[a]);
        for (std::size_t kk = 0; kk < row.size(); ++kk)
          row[kk] = xi[kk] + mag * dir[kk];
      }
    }
    const std::vector<int> probe_labels(std::size_t(n_directions) * n_mags, labels[i]);
    const Tensor<T> base_pix({1, shape[0], shape[1], shape[2]});
    Tensor<T> base_one = base_pix;
    std::copy(xi.begin(), xi.end(), base_one.data());
    const auto base =
        probe_loss(base_one, std::vector<int>{labels[i]}, batch.image_ids[i]);
    const auto losses = probe_loss(probes, probe_labels, batch.image_ids[i]);

    for (std::size_t a = 0; a < n_mags; ++a) {
      T acc = 0;
      for (int j = 0; j < n_directions; ++j)
        acc += losses[std::size_t(j) * n_mags + a] - base[0];
      prof.per_image.at(i, a) = acc / static_cast<T>(n_directions);
    }
  }

  prof.mean.assign(n_mags, T(0));
  for (std::size_t a = 0; a < n_mags; ++a) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += prof.per_image.at(i, a);
    prof.mean[a] = n ? s / static_cast<T>(n) : T(0);
  }
  return prof;
}

// Cross-recipe comparison: per-magnitude batch-mean curves, per-recipe mean
// area under the profile, and pairwise per-magnitude differences.
template <typename T>
struct ProfileComparison {
  std::vector<double> magnitudes;
  std::vector<std::string> recipes;
  std::vector<std::vector<T>> mean_curves;  // per recipe
  std::vector<T> mean_areas;                // per recipe
};

template <typename T>
ProfileComparison<T> compare_profiles(
    const std::vector<std::pair<std::string, const FlatnessProfile<T>*>>& profiles) {
  if (profiles.empty()) throw InvalidInput("no profiles to compare");
  ProfileComparison<T> cmp;
  cmp.magnitudes = profiles.front().second->magnitudes;
  for (const auto& [name, prof] : profiles) {
    if (prof->magnitudes != cmp.magnitudes)
      throw InvalidInput("profiles must share the magnitude grid");
    cmp.recipes.push_back(name);
    cmp.mean_curves.emplace_back(prof->mean);
    cmp.mean_areas.push_back(prof->mean_area_under());
  }
  return cmp;
}

}  // namespace rapkit
