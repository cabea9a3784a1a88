#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "rapkit/data/synthetic.hpp"
#include "rapkit/tensor.hpp"

namespace rapkit::data {

struct DatasetRecord {
  std::string filename;
  int label = 0;
  int target_label = 0;
};

// Validated image/label index. Images are decoded once at load time (the
// index is rejected if any referenced file is missing or undecodable) and
// served as [0,1] float batches whose image_ids are global dataset indices.
class Dataset {
 public:
  // CSV with header `filename,label,target_label`, images as PNG under root.
  // expected_classes < 0 infers the class count from the labels.
  static Dataset load(const std::filesystem::path& root,
                      const std::filesystem::path& index_csv, int expected_classes = -1);

  // In-memory synthetic window [start, start+count).
  static Dataset synthetic(const SyntheticDatasetSpec& spec, std::size_t count,
                           std::int64_t start = 0);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  int class_count() const { return class_count_; }
  std::array<std::size_t, 3> image_shape() const { return shape_; }
  const std::vector<DatasetRecord>& records() const { return records_; }
  const std::string& id() const { return id_; }

  ImageBatch<float> batch(std::size_t start, std::size_t count) const;
  ImageBatch<float> all() const { return batch(0, size()); }

 private:
  std::vector<DatasetRecord> records_;
  Tensor<float> pixels_;  // N x C x H x W cache
  std::vector<std::int64_t> ids_;
  std::array<std::size_t, 3> shape_{0, 0, 0};
  int class_count_ = 0;
  std::string id_;
};

}  // namespace rapkit::data
