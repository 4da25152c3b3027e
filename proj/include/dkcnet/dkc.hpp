#pragma once

#include <span>
#include <string>
#include <vector>

#include "dkcnet/ops.hpp"
#include "dkcnet/params.hpp"

namespace dkcnet {

/// Layout of the excitation stage that turns the squeezed vector into channel
/// weights.
enum class ExcitationLayout {
  kTwoLayer,     // FC(C -> C/r) -> ReLU -> dropout -> FC(C/r -> C) -> sigmoid
  kSingleLayer,  // dropout -> FC(C -> C) -> sigmoid
};

struct DkcConfig {
  std::size_t channels = 64;
  std::size_t groups = 2;                     // channel shuffle groups
  std::vector<std::size_t> dilations{2, 3, 4};  // one branch per entry
  std::size_t kernel_size = 2;
  std::size_t reduction = 16;
  double dropout = 0.25;
  ExcitationLayout excitation = ExcitationLayout::kTwoLayer;

  /// Throws ConfigError on any broken invariant.
  void validate() const;
  std::size_t hidden() const { return channels / reduction; }
};

struct DkcBranchParams {
  Var kernel;  // (C, C, k, k)
  Var gamma;
  Var beta;
  BatchNormBuffers bn;
};

struct DkcParams {
  std::vector<DkcBranchParams> branches;
  Var fc1_weight;
  Var fc1_bias;
  Var fc2_weight;  // undefined for ExcitationLayout::kSingleLayer
  Var fc2_bias;

  /// Allocates and registers every tensor under `prefix` in `store`.
  static DkcParams create(const DkcConfig& cfg, ParamStore& store, const std::string& prefix,
                          Rng& rng);
};

/// Group-transpose permutation: channel a*(C/g)+b moves to b*g+a.
Var channel_shuffle(const Var& x, std::size_t groups);
std::vector<std::size_t> channel_shuffle_permutation(std::size_t channels, std::size_t groups);

/// Dilated conv (same padding) -> batch norm -> ReLU for branch `index`.
Var dkc_branch(const Var& p, const DkcConfig& cfg, DkcParams& params, std::size_t index,
               Mode mode);
/// Elementwise sum of the branch outputs.
Var dkc_fuse(std::span<const Var> branches);
/// Global max pool + global average pool, per channel.
Var dkc_squeeze(const Var& fused);
/// Channel weights in (0, 1), shape (n, C, 1, 1).
Var dkc_excite(const Var& squeezed, const DkcConfig& cfg, const DkcParams& params, Rng& rng,
               Mode mode);
/// Sum over branches of weights (broadcast) times branch output.
Var dkc_reweight(const Var& weights, std::span<const Var> branches);

/// Every intermediate of one block evaluation.
struct DkcTrace {
  Var shuffled;
  std::vector<Var> branches;
  Var fused;
  Var squeezed;
  Var weights;
  Var output;
};

DkcTrace dkc_forward_traced(const Var& x, const DkcConfig& cfg, DkcParams& params, Rng& rng,
                            Mode mode);
Var dkc_forward(const Var& x, const DkcConfig& cfg, DkcParams& params, Rng& rng, Mode mode);

}  // namespace dkcnet
