#include "dkcnet/se.hpp"

#include "dkcnet/errors.hpp"
#include "dkcnet/init.hpp"

namespace dkcnet {

void SeConfig::validate() const {
  if (channels == 0) throw ConfigError("se: channels must be positive");
  if (reduction == 0 || channels % reduction != 0) {
    throw ConfigError("se: channels " + std::to_string(channels) + " not divisible by reduction " +
                      std::to_string(reduction));
  }
}

SeParams SeParams::create(const SeConfig& cfg, ParamStore& store, const std::string& prefix,
                          Rng& rng) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  const std::size_t h = cfg.hidden();
  SeParams p;
  p.fc1_weight = store.add(prefix + ".fc1.weight", init::fan_in_uniform(Shape{h, c, 1, 1}, rng));
  p.fc1_bias = store.add(prefix + ".fc1.bias", Tensor4(Shape{1, h, 1, 1}, 0.0));
  p.fc2_weight = store.add(prefix + ".fc2.weight", init::fan_in_uniform(Shape{c, h, 1, 1}, rng));
  p.fc2_bias = store.add(prefix + ".fc2.bias", Tensor4(Shape{1, c, 1, 1}, 0.0));
  return p;
}

Var se_weights(const Var& x, const SeParams& params) {
  const std::size_t expected = params.fc1_weight.shape().c;
  if (x.shape().c != expected) {
    throw DimensionError("se_forward: input has " + std::to_string(x.shape().c) +
                         " channels, block expects " + std::to_string(expected));
  }
  Var hidden = relu(fully_connected(global_avg_pool(x), params.fc1_weight, params.fc1_bias));
  return sigmoid(fully_connected(hidden, params.fc2_weight, params.fc2_bias));
}

Var se_forward(const Var& x, const SeParams& params) { return mul(x, se_weights(x, params)); }

}  // namespace dkcnet
