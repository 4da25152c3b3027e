#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "dkcnet/tensor.hpp"

namespace dkcnet {

/// Planar (channel, row, column) image with values in [0, 1].
struct Image {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
  bool empty() const { return data.empty(); }
  bool operator==(const Image&) const = default;
};

/// 8-bit RGB (or grayscale, expanded to RGB) raster scaled to [0, 1].
Image load_image(const std::filesystem::path& path);
/// Writes an 8-bit PNG (or whatever the extension selects); values are
/// clamped to [0, 1] and rounded. One-channel images are written as grayscale.
void save_image(const std::filesystem::path& path, const Image& img);
/// Round trip through 8-bit storage without touching the disk.
Image quantize8(const Image& img);

inline constexpr double kBlackThreshold = 10.0 / 255.0;

/// Tight bounding box of pixels whose largest channel exceeds `threshold`,
/// zero-padded to a square with the content centered (extra row or column on
/// the bottom or right). Throws DataError on an all-black image.
Image crop_fov(const Image& img, double threshold = kBlackThreshold);

/// Bilinear resampling with corner-aligned grids: output index i samples the
/// source at i * (in - 1) / (out - 1), or at (in - 1) / 2 when out == 1.
Image resize(const Image& img, std::size_t height, std::size_t width);

/// Bilinear sample at a fractional position; outside the image reads `fill`.
double sample_bilinear(const Image& img, std::size_t c, double y, double x, double fill = 0.0);

/// Stacks equally sized images into an (n, c, h, w) tensor.
Tensor4 to_tensor(std::span<const Image> images);
Image from_tensor(const Tensor4& t, std::size_t index);

}  // namespace dkcnet
