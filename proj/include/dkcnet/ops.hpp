#pragma once

#include <cstddef>
#include <optional>

#include "dkcnet/autograd.hpp"
#include "dkcnet/rng.hpp"

namespace dkcnet {

enum class Mode { kTrain, kEval };

enum class Padding {
  kSame,   // output extent ceil(in / stride); zero fill, odd remainder on bottom/right
  kValid,  // no padding
};

struct ConvOptions {
  std::size_t dilation = 1;
  std::size_t stride = 1;
  Padding padding = Padding::kSame;
};

/// Zero padding applied before/after one spatial axis and the resulting extent.
struct AxisPadding {
  std::size_t before = 0;
  std::size_t after = 0;
  std::size_t output = 0;
};

/// (kernel - 1) * dilation + 1
constexpr std::size_t effective_extent(std::size_t kernel, std::size_t dilation) {
  return (kernel - 1) * dilation + 1;
}

AxisPadding axis_padding(std::size_t input, std::size_t kernel, const ConvOptions& opt);

/// Dilated 2-D convolution. kernel is (c_out, c_in, kh, kw); bias, when given,
/// is (1, c_out, 1, 1).
Var conv2d(const Var& x, const Var& kernel, const std::optional<Var>& bias = std::nullopt,
           const ConvOptions& opt = {});

/// Non-trainable state of one batch-norm layer. All three are leaves.
struct BatchNormBuffers {
  Var running_mean;  // (1, C, 1, 1)
  Var running_var;   // (1, C, 1, 1), unbiased batch variance is blended in
  Var tracked;       // (1, 1, 1, 1), number of train-mode updates

  static BatchNormBuffers create(std::size_t channels);
};

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization. gamma and beta are (1, C, 1, 1). Train mode uses
/// batch statistics and updates `buffers`; eval mode reads them.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormBuffers& buffers,
               Mode mode, const BatchNormOptions& opt = {});

Var relu(const Var& x);
/// Logistic function; output clamped into the open interval (0, 1).
Var sigmoid(const Var& x);

Var global_avg_pool(const Var& x);
/// Backward routes to the first maximal position in row-major order.
Var global_max_pool(const Var& x);

/// Affine map of the flattened (c, h, w) features of each sample. weight is
/// (c_out, c_in, 1, 1), bias (1, c_out, 1, 1). Output (n, c_out, 1, 1).
Var fully_connected(const Var& x, const Var& weight, const std::optional<Var>& bias);

/// Inverted dropout. Eval mode and rate 0 return `x` unchanged.
Var dropout(const Var& x, double rate, Rng& rng, Mode mode);

/// Elementwise sum; y may also be (n, c, 1, 1) against x (n, c, h, w).
Var add(const Var& x, const Var& y);
/// Elementwise product with the same broadcast rule as add().
Var mul(const Var& x, const Var& y);
Var scale(const Var& x, double factor);

/// Sum of all entries as a (1,1,1,1) tensor.
Var sum(const Var& x);
/// Sum of x * weights as a (1,1,1,1) tensor; weights are constant.
Var weighted_sum(const Var& x, const Tensor4& weights);

/// Reorders channels: output channel j takes input channel perm[j].
Var permute_channels(const Var& x, std::span<const std::size_t> perm);

}  // namespace dkcnet
