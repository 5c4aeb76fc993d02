#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kwspot {

// 8-bit RGB raster, row-major. Pixel values map to [0, 1] as value / 255.
struct ImageRGB {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> data;  // h * w * 3

  static ImageRGB filled(int h, int w, uint8_t r, uint8_t g, uint8_t b);

  uint8_t& at(int row, int col, int ch) {
    return data[(size_t(row) * w + col) * 3 + ch];
  }
  uint8_t at(int row, int col, int ch) const {
    return data[(size_t(row) * w + col) * 3 + ch];
  }
  bool empty() const { return data.empty(); }
};

// PNG io, 8-bit RGB. Other color types are converted on read.
ImageRGB read_png(const std::string& path);
void write_png(const ImageRGB& img, const std::string& path);

}  // namespace kwspot
