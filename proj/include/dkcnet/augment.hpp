#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "dkcnet/image.hpp"
#include "dkcnet/rng.hpp"

namespace dkcnet {

enum class AugmentKind {
  kNone,
  kFlip,
  kRescale,
  kCrop,
  kRotation,
  kContrast,
  kHue,
  kSaturation,
  kGamma,
};

struct AugmentRanges {
  double rotation_deg = 15.0;
  double contrast_lo = 0.8, contrast_hi = 1.2;
  double hue_deg = 10.0;
  double saturation_lo = 0.8, saturation_hi = 1.2;
  double gamma_lo = 0.8, gamma_hi = 1.25;
  double crop_min_area = 0.85;
};

/// One augmentation step. `ratio` is only meaningful for rescale; `jitter`
/// marks the repeated entries at the tail of the priority list, whose
/// parameters come from a different stream.
struct AugmentOp {
  AugmentKind kind = AugmentKind::kNone;
  double ratio = 1.0;
  bool jitter = false;

  /// Stable text form used in manifests: "flip", "rescale0.9", "rotation+", ...
  std::string name() const;
  static AugmentOp parse(std::string_view text);
  bool operator==(const AugmentOp&) const = default;
};

inline constexpr std::size_t kMaxAugmentations = 13;

/// Fixed order in which oversampling spends its augmentations: the image
/// keeps its original and gains the first (multiplicity - 1) entries.
const std::array<AugmentOp, kMaxAugmentations>& augmentation_priority();

/// Applies `op` with parameters drawn from Rng(seed). Output has the input's
/// dimensions and values in [0, 1].
Image apply_augmentation(const Image& img, const AugmentOp& op, std::uint64_t seed,
                         const AugmentRanges& ranges = {});

Image flip_horizontal(const Image& img);
/// Shrinks to round(ratio * size) and centers the result on a black canvas.
Image rescale_on_canvas(const Image& img, double ratio);
/// Square crop holding `area_fraction` of the image, resized back to full size.
Image crop_square(const Image& img, double area_fraction, double offset_y, double offset_x);
Image rotate(const Image& img, double degrees);
/// Per-channel (v - mean) * factor + mean, clamped.
Image adjust_contrast(const Image& img, double factor);
Image shift_hue(const Image& img, double degrees);
Image scale_saturation(const Image& img, double factor);
/// v^g per value.
Image adjust_gamma(const Image& img, double g);

}  // namespace dkcnet
