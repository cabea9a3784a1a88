#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "rapkit/tensor.hpp"

namespace rapkit::data {

// Bundled texture-blob generator: each class is a fixed mixture of oriented
// sinusoid textures plus a Gaussian blob in class-specific colors; samples
// jitter phases, blob position, brightness and add pixel noise. Values are
// quantized to 8-bit levels so PNG round-trips are lossless.
struct SyntheticDatasetSpec {
  int classes = 10;
  std::size_t resolution = 32;
  std::size_t channels = 3;
  std::uint64_t seed = 7;
  double noise = 0.10;  // additive Gaussian sigma before quantization

  std::string id() const;
  void validate() const;
};

// Deterministic global indexing: sample `idx` has class idx % classes and a
// fixed target label != class. Any [start, start+count) window reproduces the
// same images regardless of batching.
ImageBatch<float> synthetic_batch(const SyntheticDatasetSpec& spec, std::int64_t start,
                                  std::size_t count);

// Writes count images as PNG plus an index.csv (filename,label,target_label).
void materialize_synthetic(const SyntheticDatasetSpec& spec, std::size_t count,
                           const std::filesystem::path& dir);

}  // namespace rapkit::data
