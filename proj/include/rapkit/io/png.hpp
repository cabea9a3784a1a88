#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace rapkit::io {

struct PngImage {
  std::size_t channels = 0;  // 1 or 3
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> chw;  // values in [0,1]
};

// 8-bit gray (C=1) or RGB (C=3); pixels are round(v*255) clamped to [0,255].
std::vector<std::uint8_t> encode_png(const float* chw, std::size_t channels,
                                     std::size_t height, std::size_t width);
PngImage decode_png(std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& path, const float* chw, std::size_t channels,
               std::size_t height, std::size_t width);
PngImage read_png(const std::filesystem::path& path);

}  // namespace rapkit::io
