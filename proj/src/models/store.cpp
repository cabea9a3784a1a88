#include "rapkit/models/store.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

#include "rapkit/errors.hpp"
#include "rapkit/util/hash.hpp"

namespace rapkit {

using nlohmann::json;

namespace {

json spec_to_json(const ToyModelSpec& s) {
  json j{{"name", s.name},
         {"architecture", to_string(s.architecture)},
         {"num_classes", s.num_classes},
         {"input_shape", {s.input_shape[0], s.input_shape[1], s.input_shape[2]}},
         {"training_seed", s.training_seed},
         {"dataset_id", s.dataset_id}};
  if (s.architecture == ModelArch::mlp) {
    j["mlp_hidden"] = s.mlp_hidden;
  } else {
    j["cnn"] = {{"conv1", s.cnn.conv1}, {"conv2", s.cnn.conv2}, {"hidden", s.cnn.hidden}};
  }
  return j;
}

ToyModelSpec spec_from_json(const json& j) {
  ToyModelSpec s;
  s.name = j.at("name").get<std::string>();
  const auto arch = j.at("architecture").get<std::string>();
  if (arch == "mlp")
    s.architecture = ModelArch::mlp;
  else if (arch == "small_cnn")
    s.architecture = ModelArch::small_cnn;
  else
    throw InvalidInput("unknown architecture: " + arch);
  s.num_classes = j.at("num_classes").get<int>();
  const auto shape = j.at("input_shape");
  s.input_shape = {shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>(),
                   shape.at(2).get<std::size_t>()};
  s.training_seed = j.at("training_seed").get<std::uint64_t>();
  s.dataset_id = j.value("dataset_id", "");
  if (s.architecture == ModelArch::mlp) {
    s.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
  } else {
    const auto& c = j.at("cnn");
    s.cnn = {c.at("conv1").get<int>(), c.at("conv2").get<int>(), c.at("hidden").get<int>()};
  }
  return s;
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw InvalidInput("truncated weight file");
  return v;
}

constexpr char kMagic[4] = {'R', 'A', 'P', 'W'};

}  // namespace

void ToyModelSpec::validate() const {
  if (name.empty()) throw InvalidConfig("model spec needs a name");
  if (num_classes < 2) throw InvalidConfig("num_classes must be >= 2");
  if (input_shape[0] == 0 || input_shape[1] == 0 || input_shape[2] == 0)
    throw InvalidConfig("input shape must be nonzero");
  if (architecture == ModelArch::mlp) {
    if (mlp_hidden.empty()) throw InvalidConfig("mlp needs at least one hidden layer");
    for (int h : mlp_hidden)
      if (h < 1) throw InvalidConfig("mlp hidden widths must be positive");
  } else {
    if (cnn.conv1 < 1 || cnn.conv2 < 1 || cnn.hidden < 1)
      throw InvalidConfig("cnn channel counts must be positive");
    if (input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0)
      throw InvalidConfig("small_cnn needs H and W divisible by 4");
  }
}

std::string ToyModelSpec::canonical_json() const { return spec_to_json(*this).dump(); }

std::string ToyModelSpec::spec_hash() const { return hex64(fnv1a64(canonical_json())); }

void write_weights(const std::filesystem::path& file, const WeightMap& weights) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw InvalidInput("cannot write weights: " + file.string());
  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, 1);  // format version
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(weights.size()));
  for (const auto& [name, tensor] : weights) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d = 0; d < tensor.rank(); ++d)
      write_pod<std::uint64_t>(os, tensor.dim(d));
    os.write(reinterpret_cast<const char*>(tensor.data()),
             static_cast<std::streamsize>(tensor.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("short write: " + file.string());
}

WeightMap read_weights(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw InvalidInput("cannot read weights: " + file.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw InvalidInput("bad weight file magic: " + file.string());
  const auto version = read_pod<std::uint32_t>(is);
  if (version != 1) throw InvalidInput("unsupported weight format version");
  const auto count = read_pod<std::uint32_t>(is);
  WeightMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = read_pod<std::uint32_t>(is);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_pod<std::uint64_t>(is));
    Tensor<float> t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!is) throw InvalidInput("truncated weight file: " + file.string());
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

void save_model(const std::filesystem::path& dir, const ModelManifest& manifest,
                const WeightMap& weights) {
  std::filesystem::create_directories(dir);
  write_weights(dir / manifest.weight_file, weights);
  json j{{"spec", spec_to_json(manifest.spec)},
         {"spec_hash", manifest.spec.spec_hash()},
         {"preprocessing",
          {{"mean", manifest.preprocessing.mean}, {"std", manifest.preprocessing.std}}},
         {"train_accuracy", manifest.train_accuracy},
         {"test_accuracy", manifest.test_accuracy},
         {"weight_file", manifest.weight_file},
         {"format_version", manifest.format_version}};
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw InvalidInput("cannot write manifest under " + dir.string());
  os << j.dump(2) << '\n';
}

bool model_exists(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / "manifest.json");
}

StoredModel load_model(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw InvalidInput("no model manifest under " + dir.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw InvalidInput("bad manifest under " + dir.string() + ": " + e.what());
  }
  StoredModel out;
  out.manifest.spec = spec_from_json(j.at("spec"));
  out.manifest.spec.validate();
  out.manifest.preprocessing.mean = j.at("preprocessing").at("mean").get<std::vector<double>>();
  out.manifest.preprocessing.std = j.at("preprocessing").at("std").get<std::vector<double>>();
  out.manifest.train_accuracy = j.at("train_accuracy").get<double>();
  out.manifest.test_accuracy = j.at("test_accuracy").get<double>();
  out.manifest.weight_file = j.value("weight_file", "weights.bin");
  out.manifest.format_version = j.value("format_version", 1);
  out.weights = read_weights(dir / out.manifest.weight_file);
  return out;
}

}  // namespace rapkit
