#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace pcdm {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RgbImage {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int64_t w, int64_t h, uint8_t fill = 255);
  uint8_t* at(int64_t x, int64_t y) { return &pixels[static_cast<size_t>((y * width + x) * 3)]; }
  const uint8_t* at(int64_t x, int64_t y) const { return &pixels[static_cast<size_t>((y * width + x) * 3)]; }
};

RgbImage decode_png(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_png(const RgbImage& image);

RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace pcdm
