#include "dkcnet/init.hpp"

#include <cmath>

namespace dkcnet::init {

Tensor4 he_normal(Shape shape, Rng& rng) {
  Tensor4 t(shape);
  const double fan_in = static_cast<double>(shape.c * shape.h * shape.w);
  const double sd = std::sqrt(2.0 / fan_in);
  for (double& v : t.data()) v = sd * rng.normal();
  return t;
}

Tensor4 fan_in_uniform(Shape shape, Rng& rng) {
  Tensor4 t(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(shape.c * shape.h * shape.w));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace dkcnet::init
