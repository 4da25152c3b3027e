#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dkcnet/image.hpp"
#include "dkcnet/model.hpp"

namespace dkcnet {

enum class CamLayer { kBackboneOut, kAttentionOut, kSeOut };

const char* cam_layer_name(CamLayer layer);
/// Accepts "backbone_out", "attention_out" and "se_out"; anything else is an
/// ArgumentError.
CamLayer parse_cam_layer(std::string_view name);

struct Heatmap {
  Image map;  // one channel, values in [0, 1]
  std::size_t cls = 0;
  CamLayer layer = CamLayer::kSeOut;
  std::string source;
  std::vector<double> weights;  // per-channel Grad-CAM weights
  bool degenerate = false;      // flat map, returned as all zeros
};

/// Grad-CAM from one image's feature maps (1, C, h, w) and the gradient of the
/// target score with respect to them: ReLU of the gradient-weighted channel
/// sum, bilinearly resized to out_h x out_w, then min-max normalized.
Heatmap cam_from_maps(const Tensor4& features, const Tensor4& grads, std::size_t out_h,
                      std::size_t out_w);

/// Runs the model in eval mode on one (3, S, S) image and explains the
/// pre-sigmoid logit of `cls` (times `logit_scale`) at `layer`. The output has
/// the model's input size. Parameter gradient buffers are overwritten.
Heatmap grad_cam(Model& model, const Image& image, std::size_t cls, CamLayer layer,
                 double logit_scale = 1.0);

struct LayerComparison {
  Heatmap backbone;
  Heatmap refined;
};

LayerComparison compare_layers(Model& model, const Image& image, std::size_t cls,
                               CamLayer refined = CamLayer::kSeOut);

/// Row-major argmax (first maximum wins).
std::pair<std::size_t, std::size_t> heatmap_peak(const Heatmap& h);

/// Blends a jet-coloured heatmap over an RGB image of the same size.
Image overlay_heatmap(const Image& image, const Heatmap& h, double alpha = 0.5);
/// Places images of equal height next to each other with a black gap.
Image side_by_side(const std::vector<Image>& images, std::size_t gap = 4);

/// "<id>_<class>_<layer>" used as the stem of every heatmap file.
std::string heatmap_stem(const std::string& id, std::size_t cls, CamLayer layer);

struct HeatmapFiles {
  std::filesystem::path gray;
  std::filesystem::path overlay;
};

/// Writes <stem>.png (8-bit grayscale) and, when `image` is given, <stem>_overlay.png.
HeatmapFiles write_heatmap(const std::filesystem::path& dir, const std::string& id,
                           const Heatmap& h, const Image* image = nullptr);

}  // namespace dkcnet
