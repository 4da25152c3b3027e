#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dkcnet {

/// Extents of a rank-4 tensor in (batch, channels, height, width) order.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense rank-4 array of doubles, row-major over (n, c, h, w).
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape shape, double fill = 0.0);
  Tensor4(Shape shape, std::vector<double> values);

  static Tensor4 scalar(double v) { return Tensor4(Shape{1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& vector() const { return data_; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Contiguous (h, w) plane of sample n, channel c.
  std::span<double> plane(std::size_t n, std::size_t c) {
    return std::span<double>(data_).subspan(offset(n, c, 0, 0), shape_.plane());
  }
  std::span<const double> plane(std::size_t n, std::size_t c) const {
    return std::span<const double>(data_).subspan(offset(n, c, 0, 0), shape_.plane());
  }

  void fill(double v);
  bool all_finite() const;
  double item() const;

  /// Exact shape and bitwise-equal values (NaN never compares equal).
  bool operator==(const Tensor4&) const = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Throws DimensionError unless a == b.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace dkcnet
