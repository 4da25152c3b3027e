#include "dkcnet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "dkcnet/errors.hpp"

namespace dkcnet {

namespace {

const char* kind_name(AugmentKind k) {
  switch (k) {
    case AugmentKind::kNone: return "none";
    case AugmentKind::kFlip: return "flip";
    case AugmentKind::kRescale: return "rescale";
    case AugmentKind::kCrop: return "crop";
    case AugmentKind::kRotation: return "rotation";
    case AugmentKind::kContrast: return "contrast";
    case AugmentKind::kHue: return "hue";
    case AugmentKind::kSaturation: return "saturation";
    case AugmentKind::kGamma: return "gamma";
  }
  return "none";
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d == 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = 60.0 * std::fmod((g - b) / d, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / d + 2.0);
  } else {
    h = 60.0 * ((r - g) / d + 4.0);
  }
  if (h < 0.0) h += 360.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = std::fmod(h, 360.0);
  if (h < 0.0) h += 360.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r1 = c, g1 = x; break;
    case 1: r1 = x, g1 = c; break;
    case 2: g1 = c, b1 = x; break;
    case 3: g1 = x, b1 = c; break;
    case 4: r1 = x, b1 = c; break;
    default: r1 = c, b1 = x; break;
  }
  const double m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

template <typename F>
Image map_hsv(const Image& img, F&& f) {
  if (img.channels != 3) throw ArgumentError("colour adjustment needs a 3-channel image");
  Image out = img;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      double h, s, v;
      rgb_to_hsv(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x), h, s, v);
      f(h, s, v);
      double r, g, b;
      hsv_to_rgb(h, s, v, r, g, b);
      out.at(0, y, x) = clamp01(r);
      out.at(1, y, x) = clamp01(g);
      out.at(2, y, x) = clamp01(b);
    }
  return out;
}

}  // namespace

std::string AugmentOp::name() const {
  std::ostringstream os;
  os << kind_name(kind);
  if (kind == AugmentKind::kRescale) os << ratio;
  if (jitter) os << "+";
  return os.str();
}

AugmentOp AugmentOp::parse(std::string_view text) {
  AugmentOp op;
  std::string s(text);
  if (!s.empty() && s.back() == '+') {
    op.jitter = true;
    s.pop_back();
  }
  if (s.rfind("rescale", 0) == 0) {
    op.kind = AugmentKind::kRescale;
    try {
      op.ratio = std::stod(s.substr(7));
    } catch (const std::exception&) {
      throw DataError("bad rescale augmentation '" + std::string(text) + "'");
    }
    if (!(op.ratio > 0.0 && op.ratio <= 1.0)) throw DataError("rescale ratio out of range");
    return op;
  }
  for (AugmentKind k : {AugmentKind::kNone, AugmentKind::kFlip, AugmentKind::kCrop,
                        AugmentKind::kRotation, AugmentKind::kContrast, AugmentKind::kHue,
                        AugmentKind::kSaturation, AugmentKind::kGamma}) {
    if (s == kind_name(k)) {
      op.kind = k;
      return op;
    }
  }
  throw DataError("unknown augmentation '" + std::string(text) + "'");
}

const std::array<AugmentOp, kMaxAugmentations>& augmentation_priority() {
  static const std::array<AugmentOp, kMaxAugmentations> list{{
      {AugmentKind::kFlip, 1.0, false},
      {AugmentKind::kRescale, 0.9, false},
      {AugmentKind::kRescale, 0.8, false},
      {AugmentKind::kRotation, 1.0, false},
      {AugmentKind::kContrast, 1.0, false},
      {AugmentKind::kRescale, 0.7, false},
      {AugmentKind::kHue, 1.0, false},
      {AugmentKind::kSaturation, 1.0, false},
      {AugmentKind::kGamma, 1.0, false},
      {AugmentKind::kCrop, 1.0, false},
      {AugmentKind::kRescale, 0.5, false},
      {AugmentKind::kRotation, 1.0, true},
      {AugmentKind::kContrast, 1.0, true},
  }};
  return list;
}

Image flip_horizontal(const Image& img) {
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

Image rescale_on_canvas(const Image& img, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ArgumentError("rescale ratio must lie in (0, 1]");
  const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratio * static_cast<double>(img.height))));
  const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratio * static_cast<double>(img.width))));
  const Image small = resize(img, h, w);
  Image out(img.channels, img.height, img.width, 0.0);
  const std::size_t oy = (img.height - h) / 2, ox = (img.width - w) / 2;
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, oy + y, ox + x) = small.at(c, y, x);
  return out;
}

Image crop_square(const Image& img, double area_fraction, double offset_y, double offset_x) {
  if (!(area_fraction > 0.0 && area_fraction <= 1.0)) throw ArgumentError("crop area must lie in (0, 1]");
  const double f = std::sqrt(area_fraction);
  const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * static_cast<double>(img.height))));
  const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * static_cast<double>(img.width))));
  const auto y0 = static_cast<std::size_t>(std::floor(std::clamp(offset_y, 0.0, 1.0) * static_cast<double>(img.height - h)));
  const auto x0 = static_cast<std::size_t>(std::floor(std::clamp(offset_x, 0.0, 1.0) * static_cast<double>(img.width - w)));
  Image part(img.channels, h, w);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) part.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return resize(part, img.height, img.width);
}

Image rotate(const Image& img, double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(img.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(img.width) - 1.0) / 2.0;
  Image out(img.channels, img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      // inverse map: rotate the output coordinate back onto the source
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sy = cy + cs * dy - sn * dx;
      const double sx = cx + sn * dy + cs * dx;
      for (std::size_t c = 0; c < img.channels; ++c) out.at(c, y, x) = clamp01(sample_bilinear(img, c, sy, sx));
    }
  return out;
}

Image adjust_contrast(const Image& img, double factor) {
  Image out = img;
  const std::size_t plane = img.height * img.width;
  if (plane == 0) return out;
  for (std::size_t c = 0; c < img.channels; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += img.data[c * plane + i];
    mean /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      double& v = out.data[c * plane + i];
      v = clamp01((v - mean) * factor + mean);
    }
  }
  return out;
}

Image shift_hue(const Image& img, double degrees) {
  return map_hsv(img, [degrees](double& h, double&, double&) { h += degrees; });
}

Image scale_saturation(const Image& img, double factor) {
  return map_hsv(img, [factor](double&, double& s, double&) { s = clamp01(s * factor); });
}

Image adjust_gamma(const Image& img, double g) {
  if (!(g > 0.0)) throw ArgumentError("gamma must be positive");
  Image out = img;
  for (double& v : out.data) v = std::pow(clamp01(v), g);
  return out;
}

Image apply_augmentation(const Image& img, const AugmentOp& op, std::uint64_t seed,
                         const AugmentRanges& r) {
  Rng rng(op.jitter ? Rng::mix(seed, Rng::hash("jitter")) : seed);
  switch (op.kind) {
    case AugmentKind::kNone: return img;
    case AugmentKind::kFlip: return flip_horizontal(img);
    case AugmentKind::kRescale: return rescale_on_canvas(img, op.ratio);
    case AugmentKind::kCrop: {
      const double area = rng.uniform(r.crop_min_area, 1.0);
      const double oy = rng.uniform(), ox = rng.uniform();
      return crop_square(img, area, oy, ox);
    }
    case AugmentKind::kRotation: return rotate(img, rng.uniform(-r.rotation_deg, r.rotation_deg));
    case AugmentKind::kContrast: return adjust_contrast(img, rng.uniform(r.contrast_lo, r.contrast_hi));
    case AugmentKind::kHue: return shift_hue(img, rng.uniform(-r.hue_deg, r.hue_deg));
    case AugmentKind::kSaturation:
      return scale_saturation(img, rng.uniform(r.saturation_lo, r.saturation_hi));
    case AugmentKind::kGamma: {
      // log-uniform so that g and 1/g are equally likely
      const double lo = std::log(r.gamma_lo), hi = std::log(r.gamma_hi);
      return adjust_gamma(img, std::exp(rng.uniform(lo, hi)));
    }
  }
  return img;
}

}  // namespace dkcnet
