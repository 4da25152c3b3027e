#pragma once

#include "dkcnet/rng.hpp"
#include "dkcnet/tensor.hpp"

namespace dkcnet::init {

/// He-normal draw for a conv kernel (c_out, c_in, kh, kw); fan-in c_in*kh*kw.
Tensor4 he_normal(Shape shape, Rng& rng);
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for an FC weight (c_out, c_in, 1, 1).
Tensor4 fan_in_uniform(Shape shape, Rng& rng);

}  // namespace dkcnet::init
