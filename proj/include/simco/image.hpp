#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "simco/common.hpp"

namespace simco {

/// Interleaved 8-bit RGB raster, row-major.
class RasterImage {
 public:
  RasterImage() = default;
  RasterImage(int width, int height, Rgb fill = {});

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  Rgb at(int x, int y) const {
    const auto* p = &data_[3 * (static_cast<std::size_t>(y) * width_ + x)];
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) {
    auto* p = &data_[3 * (static_cast<std::size_t>(y) * width_ + x)];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  const std::vector<std::uint8_t>& bytes() const { return data_; }
  std::vector<std::uint8_t>& bytes() { return data_; }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Binary PPM (P6, maxval 255).
void write_ppm(const std::filesystem::path& path, const RasterImage& image);
RasterImage read_ppm(const std::filesystem::path& path);

/// Outline a box with the given stroke width, clipped to the image.
void draw_box(RasterImage& image, const BBox& box, Rgb color, int stroke = 1);

}  // namespace simco
