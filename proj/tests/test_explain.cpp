#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "dkcnet/errors.hpp"
#include "dkcnet/explain.hpp"
#include "dkcnet/synthetic.hpp"

using namespace dkcnet;

namespace {

ModelConfig tiny_config(bool attention = true) {
  ModelConfig cfg;
  cfg.backbone.stages = {{8, 2}, {8, 2}};
  cfg.attention = attention;
  cfg.dkc.channels = 8;
  cfg.dkc.reduction = 4;
  cfg.se.channels = 8;
  cfg.se.reduction = 4;
  cfg.input_size = 16;
  return cfg;
}

// Eval mode needs populated running statistics.
Model warmed_model(bool attention, std::uint64_t seed) {
  Model m(tiny_config(attention), seed);
  Rng rng(seed);
  Tensor4 x(Shape{4, 3, 16, 16});
  for (double& v : x.data()) v = rng.uniform();
  m.forward(Var(x), rng, Mode::kTrain);
  return m;
}

Image random_image(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(3, size, size);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

bool normalized(const Heatmap& h) {
  const bool in_range = std::all_of(h.map.data.begin(), h.map.data.end(),
                                    [](double v) { return v >= 0.0 && v <= 1.0; });
  const double mx = *std::max_element(h.map.data.begin(), h.map.data.end());
  return in_range && (h.degenerate ? mx == 0.0 : mx == 1.0);
}

}  // namespace

TEST_CASE("single channel with uniform positive gradient gives its normalized ReLU") {
  Rng rng(3);
  Tensor4 f(Shape{1, 1, 5, 6});
  for (double& v : f.data()) v = rng.uniform(-1.0, 1.0);
  const Tensor4 g(f.shape(), 0.25);
  const Heatmap h = cam_from_maps(f, g, 5, 6);
  REQUIRE(!h.degenerate);
  double mx = 0.0;
  for (double v : f.data()) mx = std::max(mx, v);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(h.map.data[i] == doctest::Approx(std::max(f[i], 0.0) / mx).epsilon(1e-12));
  CHECK(h.weights == std::vector<double>{0.25});
  CHECK(normalized(h));
}

TEST_CASE("zero gradient yields a flagged flat map") {
  Tensor4 f(Shape{1, 3, 4, 4}, 0.7);
  const Heatmap h = cam_from_maps(f, Tensor4(f.shape(), 0.0), 16, 16);
  CHECK(h.degenerate);
  CHECK(h.map.height == 16);
  CHECK(std::all_of(h.map.data.begin(), h.map.data.end(), [](double v) { return v == 0.0; }));
  // a constant positive map is also flat
  const Heatmap c = cam_from_maps(f, Tensor4(f.shape(), 1.0), 8, 8);
  CHECK(c.degenerate);
}

TEST_CASE("two-channel map matches a hand-computed weighted sum") {
  // channel A lights the top-left corner, channel B the bottom-right one
  Tensor4 f(Shape{1, 2, 4, 4}, 0.0);
  f.at(0, 0, 0, 0) = 1.0;
  f.at(0, 0, 0, 1) = 0.5;
  f.at(0, 0, 1, 0) = 0.5;
  f.at(0, 1, 3, 3) = 1.0;
  f.at(0, 1, 2, 3) = 0.8;
  Tensor4 g(f.shape(), 0.0);
  for (std::size_t i = 0; i < 16; ++i) {
    g.at(0, 0, i / 4, i % 4) = 0.3;   // mean 0.3
    g.at(0, 1, i / 4, i % 4) = i < 8 ? 0.2 : 0.0;  // mean 0.1
  }
  const Heatmap h = cam_from_maps(f, g, 4, 4);
  CHECK(h.weights[0] == doctest::Approx(0.3));
  CHECK(h.weights[1] == doctest::Approx(0.1));
  // raw = 0.3 A + 0.1 B; the maximum 0.3 sits at (0, 0)
  CHECK(h.map.at(0, 0, 0) == doctest::Approx(1.0));
  CHECK(h.map.at(0, 0, 1) == doctest::Approx(0.15 / 0.3));
  CHECK(h.map.at(0, 1, 0) == doctest::Approx(0.15 / 0.3));
  CHECK(h.map.at(0, 3, 3) == doctest::Approx(0.1 / 0.3));
  CHECK(h.map.at(0, 2, 3) == doctest::Approx(0.08 / 0.3));
  CHECK(h.map.at(0, 2, 2) == doctest::Approx(0.0));
  const auto [py, px] = heatmap_peak(h);
  CHECK(py < 2);
  CHECK(px < 2);

  // upsampled to 16x16 the peak stays in the top-left quadrant
  const Heatmap big = cam_from_maps(f, g, 16, 16);
  const auto [by, bx] = heatmap_peak(big);
  CHECK(by < 8);
  CHECK(bx < 8);

  // negative evidence is clipped by the ReLU
  Tensor4 neg = g;
  for (std::size_t i = 0; i < 16; ++i) neg.at(0, 0, i / 4, i % 4) = -0.3;
  const Heatmap hn = cam_from_maps(f, neg, 4, 4);
  CHECK(hn.map.at(0, 0, 0) == 0.0);
  CHECK(hn.map.at(0, 3, 3) == doctest::Approx(1.0));
}

TEST_CASE("normalized maps ignore positive gradient scaling") {
  Rng rng(8);
  Tensor4 f(Shape{1, 6, 5, 5}), g(Shape{1, 6, 5, 5});
  for (double& v : f.data()) v = rng.uniform();
  for (double& v : g.data()) v = rng.uniform(-1.0, 1.0);
  const Heatmap a = cam_from_maps(f, g, 20, 20);
  for (double s : {1e-3, 0.5, 7.25, 1e4}) {
    Tensor4 gs = g;
    for (double& v : gs.data()) v *= s;
    const Heatmap b = cam_from_maps(f, gs, 20, 20);
    CHECK(b.degenerate == a.degenerate);
    for (std::size_t i = 0; i < a.map.data.size(); ++i)
      CHECK(b.map.data[i] == doctest::Approx(a.map.data[i]).epsilon(1e-10));
  }
}

TEST_CASE("cam_from_maps rejects inconsistent inputs") {
  Tensor4 f(Shape{2, 3, 4, 4}), g(Shape{2, 3, 4, 4});
  CHECK_THROWS_AS(cam_from_maps(f, g, 8, 8), DimensionError);
  Tensor4 f1(Shape{1, 3, 4, 4}), g1(Shape{1, 2, 4, 4});
  CHECK_THROWS_AS(cam_from_maps(f1, g1, 8, 8), DimensionError);
  CHECK_THROWS_AS(cam_from_maps(f1, Tensor4(f1.shape()), 0, 8), ArgumentError);
}

TEST_CASE("grad_cam on a model: range, size, determinism and scaling") {
  Model m = warmed_model(true, 4);
  const Image img = random_image(16, 9);
  for (CamLayer layer : {CamLayer::kBackboneOut, CamLayer::kAttentionOut, CamLayer::kSeOut}) {
    CAPTURE(cam_layer_name(layer));
    for (std::size_t cls : {0u, 3u, 7u}) {
      const Heatmap h = grad_cam(m, img, cls, layer);
      CHECK(h.map.channels == 1);
      CHECK(h.map.height == 16);
      CHECK(h.map.width == 16);
      CHECK(h.cls == cls);
      CHECK(h.layer == layer);
      CHECK(normalized(h));
      CHECK(grad_cam(m, img, cls, layer).map == h.map);
      const Heatmap scaled = grad_cam(m, img, cls, layer, 6.5);
      for (std::size_t i = 0; i < h.map.data.size(); ++i)
        CHECK(scaled.map.data[i] == doctest::Approx(h.map.data[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("grad_cam argument checking") {
  Model m = warmed_model(true, 2);
  const Image img = random_image(16, 1);
  CHECK_THROWS_AS(parse_cam_layer("pool5"), ArgumentError);
  CHECK(parse_cam_layer("attention_out") == CamLayer::kAttentionOut);
  CHECK_THROWS_AS(grad_cam(m, img, 8, CamLayer::kSeOut), ArgumentError);
  CHECK_THROWS_AS(grad_cam(m, img, 0, CamLayer::kSeOut, 0.0), ArgumentError);
  CHECK_THROWS_AS(grad_cam(m, random_image(20, 1), 0, CamLayer::kSeOut), DimensionError);

  Model plain = warmed_model(false, 2);
  CHECK_THROWS_AS(grad_cam(plain, img, 0, CamLayer::kSeOut), ArgumentError);
  CHECK(normalized(grad_cam(plain, img, 0, CamLayer::kBackboneOut)));
}

TEST_CASE("compare_layers pairs backbone and refined maps") {
  Model m = warmed_model(true, 6);
  const Image img = random_image(16, 2);
  const LayerComparison cmp = compare_layers(m, img, 2);
  CHECK(cmp.backbone.layer == CamLayer::kBackboneOut);
  CHECK(cmp.refined.layer == CamLayer::kSeOut);
  CHECK(cmp.backbone.map.height == cmp.refined.map.height);
  CHECK(cmp.backbone.map.width == cmp.refined.map.width);
  const LayerComparison same = compare_layers(m, img, 2, CamLayer::kBackboneOut);
  CHECK(same.backbone.map == same.refined.map);
}

TEST_CASE("heatmap files and composites") {
  const auto dir = std::filesystem::temp_directory_path() / "dkcnet_explain_files";
  std::filesystem::remove_all(dir);
  Model m = warmed_model(true, 5);
  const Image img = random_image(16, 3);
  const Heatmap h = grad_cam(m, img, 4, CamLayer::kSeOut);
  CHECK(heatmap_stem("syn00003_left", 4, CamLayer::kSeOut) == "syn00003_left_A_se_out");
  const HeatmapFiles files = write_heatmap(dir, "syn00003_left", h, &img);
  REQUIRE(std::filesystem::exists(files.gray));
  REQUIRE(std::filesystem::exists(files.overlay));
  const Image gray = load_image(files.gray);
  CHECK(gray.height == 16);
  for (std::size_t i = 0; i < 256; ++i) CHECK(std::abs(gray.data[i] - h.map.data[i]) <= 0.5 / 255.0 + 1e-12);

  const Image ov = overlay_heatmap(img, h, 0.0);
  CHECK(ov == img);
  const Image pair = side_by_side({img, overlay_heatmap(img, h)}, 4);
  CHECK(pair.width == 36);
  CHECK(pair.at(0, 5, 17) == 0.0);
  CHECK_THROWS_AS(side_by_side({img, random_image(8, 1)}), DimensionError);
}
