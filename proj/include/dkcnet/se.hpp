#pragma once

#include <string>

#include "dkcnet/ops.hpp"
#include "dkcnet/params.hpp"

namespace dkcnet {

struct SeConfig {
  std::size_t channels = 64;
  std::size_t reduction = 16;

  void validate() const;
  std::size_t hidden() const { return channels / reduction; }
};

struct SeParams {
  Var fc1_weight;  // (C/r, C, 1, 1)
  Var fc1_bias;
  Var fc2_weight;  // (C, C/r, 1, 1)
  Var fc2_bias;

  static SeParams create(const SeConfig& cfg, ParamStore& store, const std::string& prefix,
                         Rng& rng);
};

/// Per-channel weights sigmoid(FC2(ReLU(FC1(GAP(x))))), shape (n, C, 1, 1).
Var se_weights(const Var& x, const SeParams& params);
/// x scaled channel-wise by se_weights(x).
Var se_forward(const Var& x, const SeParams& params);

}  // namespace dkcnet
