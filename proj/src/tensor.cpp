#include "dkcnet/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "dkcnet/errors.hpp"

namespace dkcnet {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

Tensor4::Tensor4(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor4::Tensor4(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
  }
}

void Tensor4::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor4::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor4::item() const {
  if (data_.size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_.str());
  return data_[0];
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw DimensionError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
  }
}

}  // namespace dkcnet
