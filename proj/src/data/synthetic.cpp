#include "rapkit/data/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <vector>

#include "rapkit/errors.hpp"
#include "rapkit/io/png.hpp"
#include "rapkit/rng.hpp"

namespace rapkit::data {

namespace {

struct Wave {
  double dir_x, dir_y;  // unit direction
  double freq;          // cycles per image
  double phase;
  double amp;
  std::vector<double> channel_w;
};

struct ClassStyle {
  std::vector<double> base;  // per-channel base color
  Wave wave1, wave2;
  double blob_x, blob_y, blob_r, blob_gain;
  std::vector<double> blob_w;
};

Wave draw_wave(Rng& rng, std::size_t channels, double freq_lo, double freq_hi) {
  Wave w;
  const double theta = rng.uniform(0.0, std::numbers::pi);
  w.dir_x = std::cos(theta);
  w.dir_y = std::sin(theta);
  w.freq = rng.uniform(freq_lo, freq_hi);
  w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  w.amp = rng.uniform(0.10, 0.20);
  w.channel_w.resize(channels);
  for (auto& v : w.channel_w) v = rng.uniform(0.35, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  return w;
}

ClassStyle class_style(const SyntheticDatasetSpec& spec, int cls) {
  Rng rng(derive_seed(spec.seed, {0xC1A55u, static_cast<std::uint64_t>(cls)}));
  ClassStyle st;
  st.base.resize(spec.channels);
  for (auto& v : st.base) v = rng.uniform(0.30, 0.70);
  st.wave1 = draw_wave(rng, spec.channels, 1.2, 3.0);
  st.wave2 = draw_wave(rng, spec.channels, 3.0, 5.5);
  st.blob_x = rng.uniform(0.30, 0.70);
  st.blob_y = rng.uniform(0.30, 0.70);
  st.blob_r = rng.uniform(0.18, 0.34);
  st.blob_gain = rng.uniform(0.18, 0.32) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  st.blob_w.resize(spec.channels);
  for (auto& v : st.blob_w) v = rng.uniform(0.3, 1.0);
  return st;
}

}  // namespace

std::string SyntheticDatasetSpec::id() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "synth-c%d-r%zu-ch%zu-s%llu-n%.4f", classes, resolution,
                channels, static_cast<unsigned long long>(seed), noise);
  return buf;
}

void SyntheticDatasetSpec::validate() const {
  if (classes < 2) throw InvalidConfig("synthetic dataset needs >= 2 classes");
  if (resolution < 4) throw InvalidConfig("synthetic resolution too small");
  if (channels != 1 && channels != 3)
    throw InvalidConfig("synthetic channels must be 1 or 3");
  if (noise < 0.0) throw InvalidConfig("noise must be >= 0");
}

ImageBatch<float> synthetic_batch(const SyntheticDatasetSpec& spec, std::int64_t start,
                                  std::size_t count) {
  spec.validate();
  if (start < 0) throw InvalidInput("synthetic start index must be >= 0");

  // class styles are cheap; recompute per call to stay stateless
  std::vector<ClassStyle> styles;
  styles.reserve(std::size_t(spec.classes));
  for (int c = 0; c < spec.classes; ++c) styles.push_back(class_style(spec, c));

  const std::size_t res = spec.resolution, ch = spec.channels;
  ImageBatch<float> batch;
  batch.pixels = Tensor<float>({count, ch, res, res});
  batch.labels.resize(count);
  batch.target_labels.resize(count);
  batch.image_ids.resize(count);

  for (std::size_t i = 0; i < count; ++i) {
    const std::int64_t idx = start + std::int64_t(i);
    const int cls = static_cast<int>(idx % spec.classes);
    const ClassStyle& st = styles[std::size_t(cls)];
    batch.labels[i] = cls;
    batch.image_ids[i] = idx;

    Rng trng(derive_seed(spec.seed, {0x7A96E7u, static_cast<std::uint64_t>(idx)}));
    batch.target_labels[i] =
        static_cast<int>((cls + 1 + trng.uniform_int(std::uint64_t(spec.classes - 1))) %
                         spec.classes);

    Rng rng(derive_seed(spec.seed, {0x5A3916u, static_cast<std::uint64_t>(idx)}));
    const double dphase1 = rng.uniform(-0.6, 0.6);
    const double dphase2 = rng.uniform(-0.6, 0.6);
    const double bx = st.blob_x + rng.uniform(-0.05, 0.05);
    const double by = st.blob_y + rng.uniform(-0.05, 0.05);
    const double amp_scale = rng.uniform(0.85, 1.15);
    const double bright = rng.uniform(-0.06, 0.06);

    auto img = batch.pixels.image(i);
    const double tau = 2.0 * std::numbers::pi;
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t y = 0; y < res; ++y)
        for (std::size_t x = 0; x < res; ++x) {
          const double u = (double(x) + 0.5) / double(res);
          const double v = (double(y) + 0.5) / double(res);
          double val = st.base[c] + bright;
          val += amp_scale * st.wave1.amp * st.wave1.channel_w[c] *
                 std::sin(tau * st.wave1.freq * (u * st.wave1.dir_x + v * st.wave1.dir_y) +
                          st.wave1.phase + dphase1);
          val += amp_scale * st.wave2.amp * st.wave2.channel_w[c] *
                 std::sin(tau * st.wave2.freq * (u * st.wave2.dir_x + v * st.wave2.dir_y) +
                          st.wave2.phase + dphase2);
          const double du = u - bx, dv = v - by;
          val += st.blob_gain * st.blob_w[c] *
                 std::exp(-(du * du + dv * dv) / (2.0 * st.blob_r * st.blob_r));
          val += spec.noise * rng.normal();
          val = std::clamp(val, 0.0, 1.0);
          // quantize to 8-bit levels so PNG round-trips exactly
          img[(c * res + y) * res + x] =
              static_cast<float>(std::round(val * 255.0) / 255.0);
        }
  }
  return batch;
}

void materialize_synthetic(const SyntheticDatasetSpec& spec, std::size_t count,
                           const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.csv", std::ios::trunc);
  if (!index) throw InvalidInput("cannot write index under " + dir.string());
  index << "filename,label,target_label\n";
  const std::size_t chunk = 64;
  for (std::size_t start = 0; start < count; start += chunk) {
    const std::size_t n = std::min(chunk, count - start);
    const auto batch = synthetic_batch(spec, std::int64_t(start), n);
    for (std::size_t i = 0; i < n; ++i) {
      char name[48];
      std::snprintf(name, sizeof name, "img-%06lld.png",
                    static_cast<long long>(batch.image_ids[i]));
      io::write_png(dir / name, batch.pixels.image(i).data(), spec.channels,
                    spec.resolution, spec.resolution);
      index << name << ',' << batch.labels[i] << ',' << batch.target_labels[i] << '\n';
    }
  }
}

}  // namespace rapkit::data
