#include "rapkit/data/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "rapkit/errors.hpp"
#include "rapkit/io/png.hpp"
#include "rapkit/util/hash.hpp"

namespace rapkit::data {

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int parse_label(const std::string& s, std::size_t row, const char* what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidInput("row " + std::to_string(row) + ": bad " + what + " '" + s + "'");
  }
}

}  // namespace

Dataset Dataset::load(const std::filesystem::path& root,
                      const std::filesystem::path& index_csv, int expected_classes) {
  std::ifstream f(index_csv);
  if (!f) throw InvalidInput("index file not found: " + index_csv.string());

  std::string line;
  if (!std::getline(f, line)) throw InvalidInput("index file is missing its header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "filename,label,target_label")
    throw InvalidInput("index header must be 'filename,label,target_label'");

  Dataset ds;
  ds.id_ = "csv:" + index_csv.string();
  std::size_t row = 1;
  int max_label = -1;
  std::vector<io::PngImage> images;
  while (std::getline(f, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_row(line);
    if (fields.size() != 3)
      throw InvalidInput("row " + std::to_string(row) + ": expected 3 fields");
    DatasetRecord rec;
    rec.filename = fields[0];
    rec.label = parse_label(fields[1], row, "label");
    rec.target_label = parse_label(fields[2], row, "target_label");
    if (rec.label < 0 || rec.target_label < 0)
      throw InvalidInput("row " + std::to_string(row) + ": negative label");
    if (expected_classes > 0 &&
        (rec.label >= expected_classes || rec.target_label >= expected_classes))
      throw InvalidInput("row " + std::to_string(row) + ": label out of range");
    if (rec.label == rec.target_label)
      throw InvalidInput("row " + std::to_string(row) +
                         ": target label equals the true label");

    io::PngImage img;
    try {
      img = io::read_png(root / rec.filename);
    } catch (const std::exception& e) {
      throw InvalidInput("row " + std::to_string(row) + " (" + rec.filename +
                         "): " + e.what());
    }
    if (ds.records_.empty()) {
      ds.shape_ = {img.channels, img.height, img.width};
    } else if (ds.shape_ != std::array<std::size_t, 3>{img.channels, img.height, img.width}) {
      throw InvalidInput("row " + std::to_string(row) + " (" + rec.filename +
                         "): image shape differs from the rest of the dataset");
    }
    max_label = std::max({max_label, rec.label, rec.target_label});
    ds.records_.push_back(std::move(rec));
    images.push_back(std::move(img));
  }

  ds.class_count_ = expected_classes > 0 ? expected_classes : max_label + 1;
  if (!ds.records_.empty()) {
    ds.pixels_ = Tensor<float>({ds.records_.size(), ds.shape_[0], ds.shape_[1], ds.shape_[2]});
    ds.ids_.resize(ds.records_.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
      std::copy(images[i].chw.begin(), images[i].chw.end(), ds.pixels_.image(i).begin());
      ds.ids_[i] = std::int64_t(i);
    }
  }
  return ds;
}

Dataset Dataset::synthetic(const SyntheticDatasetSpec& spec, std::size_t count,
                           std::int64_t start) {
  auto batch = synthetic_batch(spec, start, count);
  Dataset ds;
  ds.id_ = spec.id() + "@" + std::to_string(start) + "+" + std::to_string(count);
  ds.class_count_ = spec.classes;
  ds.shape_ = {spec.channels, spec.resolution, spec.resolution};
  ds.pixels_ = std::move(batch.pixels);
  ds.ids_ = std::move(batch.image_ids);
  ds.records_.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    char name[48];
    std::snprintf(name, sizeof name, "img-%06lld.png", static_cast<long long>(ds.ids_[i]));
    ds.records_[i] = {name, batch.labels[i], batch.target_labels[i]};
  }
  return ds;
}

ImageBatch<float> Dataset::batch(std::size_t start, std::size_t count) const {
  if (start > size()) throw InvalidInput("batch start beyond dataset");
  count = std::min(count, size() - start);
  ImageBatch<float> b;
  b.pixels = Tensor<float>({count, shape_[0], shape_[1], shape_[2]});
  b.labels.resize(count);
  b.target_labels.resize(count);
  b.image_ids.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto src = pixels_.image(start + i);
    std::copy(src.begin(), src.end(), b.pixels.image(i).begin());
    b.labels[i] = records_[start + i].label;
    b.target_labels[i] = records_[start + i].target_label;
    b.image_ids[i] = ids_[start + i];
  }
  return b;
}

}  // namespace rapkit::data
