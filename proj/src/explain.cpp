#include "dkcnet/explain.hpp"

#include <algorithm>
#include <cmath>

#include "dkcnet/dataset.hpp"
#include "dkcnet/errors.hpp"
#include "dkcnet/ops.hpp"

namespace dkcnet {

const char* cam_layer_name(CamLayer layer) {
  switch (layer) {
    case CamLayer::kBackboneOut: return "backbone_out";
    case CamLayer::kAttentionOut: return "attention_out";
    case CamLayer::kSeOut: return "se_out";
  }
  return "se_out";
}

CamLayer parse_cam_layer(std::string_view name) {
  for (CamLayer l : {CamLayer::kBackboneOut, CamLayer::kAttentionOut, CamLayer::kSeOut})
    if (name == cam_layer_name(l)) return l;
  throw ArgumentError("unknown Grad-CAM layer '" + std::string(name) +
                      "' (expected backbone_out, attention_out or se_out)");
}

Heatmap cam_from_maps(const Tensor4& features, const Tensor4& grads, std::size_t out_h,
                      std::size_t out_w) {
  const Shape s = features.shape();
  if (s.n != 1) throw DimensionError("cam_from_maps expects a single image, got " + s.str());
  if (!(grads.shape() == s)) {
    throw DimensionError("cam_from_maps: gradient shape " + grads.shape().str() +
                         " differs from feature shape " + s.str());
  }
  if (out_h == 0 || out_w == 0) throw ArgumentError("cam_from_maps: empty output size");

  Heatmap h;
  h.weights.resize(s.c);
  Image raw(1, s.h, s.w, 0.0);
  for (std::size_t c = 0; c < s.c; ++c) {
    double g = 0.0;
    for (double v : grads.plane(0, c)) g += v;
    g /= static_cast<double>(s.plane());
    h.weights[c] = g;
    const auto f = features.plane(0, c);
    for (std::size_t i = 0; i < f.size(); ++i) raw.data[i] += g * f[i];
  }
  for (double& v : raw.data) v = std::max(v, 0.0);

  h.map = resize(raw, out_h, out_w);
  const auto [lo, hi] = std::minmax_element(h.map.data.begin(), h.map.data.end());
  const double min = *lo, range = *hi - *lo;
  if (!(range > 0.0) || !std::isfinite(range)) {
    h.degenerate = true;
    std::fill(h.map.data.begin(), h.map.data.end(), 0.0);
    return h;
  }
  for (double& v : h.map.data) v = std::clamp((v - min) / range, 0.0, 1.0);
  return h;
}

Heatmap grad_cam(Model& model, const Image& image, std::size_t cls, CamLayer layer,
                 double logit_scale) {
  const ModelConfig& cfg = model.config();
  if (cls >= cfg.num_classes) throw ArgumentError("grad_cam: class index out of range");
  if (!(logit_scale > 0.0)) throw ArgumentError("grad_cam: logit scale must be positive");
  if (!cfg.attention && layer != CamLayer::kBackboneOut) {
    throw ArgumentError(std::string("grad_cam: layer ") + cam_layer_name(layer) +
                        " does not exist in a backbone-only model");
  }
  if (image.channels != cfg.input_channels || image.height != cfg.input_size ||
      image.width != cfg.input_size) {
    throw DimensionError("grad_cam: image must be " + std::to_string(cfg.input_channels) + "x" +
                         std::to_string(cfg.input_size) + "x" + std::to_string(cfg.input_size));
  }

  Rng rng(0);  // unused in eval mode
  const Var input(to_tensor(std::span<const Image>(&image, 1)));
  const ModelTrace tr = model.forward_traced(input, rng, Mode::kEval);
  const Var& target = layer == CamLayer::kBackboneOut    ? tr.backbone_out
                      : layer == CamLayer::kAttentionOut ? tr.attention_out
                                                         : tr.se_out;
  Tensor4 pick(tr.logits.shape(), 0.0);
  pick.at(0, cls, 0, 0) = logit_scale;
  backward(weighted_sum(tr.logits, pick));

  Heatmap h = target.has_grad()
                  ? cam_from_maps(target.value(), target.grad(), cfg.input_size, cfg.input_size)
                  : cam_from_maps(target.value(), Tensor4(target.shape(), 0.0), cfg.input_size,
                                  cfg.input_size);
  h.cls = cls;
  h.layer = layer;
  return h;
}

LayerComparison compare_layers(Model& model, const Image& image, std::size_t cls, CamLayer refined) {
  return {grad_cam(model, image, cls, CamLayer::kBackboneOut), grad_cam(model, image, cls, refined)};
}

std::pair<std::size_t, std::size_t> heatmap_peak(const Heatmap& h) {
  const auto it = std::max_element(h.map.data.begin(), h.map.data.end());
  const auto i = static_cast<std::size_t>(it - h.map.data.begin());
  return {i / h.map.width, i % h.map.width};
}

Image overlay_heatmap(const Image& image, const Heatmap& h, double alpha) {
  if (image.channels != 3 || image.height != h.map.height || image.width != h.map.width) {
    throw DimensionError("overlay_heatmap: image and heatmap sizes differ");
  }
  Image out = image;
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) {
      const double v = h.map.at(0, y, x);
      const double jet[3] = {std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0),
                             std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0),
                             std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0)};
      for (std::size_t c = 0; c < 3; ++c)
        out.at(c, y, x) = (1.0 - alpha) * image.at(c, y, x) + alpha * jet[c];
    }
  return out;
}

Image side_by_side(const std::vector<Image>& images, std::size_t gap) {
  if (images.empty()) return {};
  const std::size_t ch = images.front().channels, height = images.front().height;
  std::size_t width = 0;
  for (const auto& im : images) {
    if (im.channels != ch || im.height != height) throw DimensionError("side_by_side: mismatched images");
    width += im.width;
  }
  width += gap * (images.size() - 1);
  Image out(ch, height, width, 0.0);
  std::size_t x0 = 0;
  for (const auto& im : images) {
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < im.width; ++x) out.at(c, y, x0 + x) = im.at(c, y, x);
    x0 += im.width + gap;
  }
  return out;
}

std::string heatmap_stem(const std::string& id, std::size_t cls, CamLayer layer) {
  const std::string name = cls < kNumClasses ? kClassNames[cls] : "class" + std::to_string(cls);
  return id + "_" + name + "_" + cam_layer_name(layer);
}

HeatmapFiles write_heatmap(const std::filesystem::path& dir, const std::string& id,
                           const Heatmap& h, const Image* image) {
  HeatmapFiles files;
  const std::string stem = heatmap_stem(id, h.cls, h.layer);
  files.gray = dir / (stem + ".png");
  save_image(files.gray, h.map);
  if (image != nullptr) {
    files.overlay = dir / (stem + "_overlay.png");
    save_image(files.overlay, overlay_heatmap(*image, h));
  }
  return files;
}

}  // namespace dkcnet
