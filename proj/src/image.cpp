#include "dkcnet/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>

#include "dkcnet/errors.hpp"

namespace dkcnet {

Image load_image(const std::filesystem::path& path) {
  const cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw IoError("cannot read image: " + path.string());
  if (m.depth() != CV_8U) throw DataError("expected an 8-bit image: " + path.string());
  Image img(3, static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols));
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      // OpenCV stores BGR
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            row[x][static_cast<int>(2 - c)] / 255.0;
      }
    }
  }
  return img;
}

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void save_image(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ArgumentError("save_image: only 1- or 3-channel images are supported");
  }
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  cv::Mat m(h, w, img.channels == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < h; ++y) {
    auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < w; ++x) {
      const auto yy = static_cast<std::size_t>(y), xx = static_cast<std::size_t>(x);
      if (img.channels == 1) {
        row[x] = to_byte(img.at(0, yy, xx));
      } else {
        for (std::size_t c = 0; c < 3; ++c) row[3 * x + static_cast<int>(2 - c)] = to_byte(img.at(c, yy, xx));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write image: " + path.string());
}

Image quantize8(const Image& img) {
  Image out = img;
  for (double& v : out.data) v = to_byte(v) / 255.0;
  return out;
}

Image crop_fov(const Image& img, double threshold) {
  std::size_t top = img.height, bottom = 0, left = img.width, right = 0;
  bool any = false;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      double m = 0.0;
      for (std::size_t c = 0; c < img.channels; ++c) m = std::max(m, img.at(c, y, x));
      if (m > threshold) {
        any = true;
        top = std::min(top, y);
        bottom = std::max(bottom, y);
        left = std::min(left, x);
        right = std::max(right, x);
      }
    }
  }
  if (!any) throw DataError("crop_fov: image has no pixel above the black threshold");
  const std::size_t h = bottom - top + 1, w = right - left + 1;
  const std::size_t side = std::max(h, w);
  const std::size_t oy = (side - h) / 2, ox = (side - w) / 2;
  Image out(img.channels, side, side, 0.0);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, oy + y, ox + x) = img.at(c, top + y, left + x);
  return out;
}

double sample_bilinear(const Image& img, std::size_t c, double y, double x, double fill) {
  if (!(y > -1.0 && x > -1.0 && y < static_cast<double>(img.height) &&
        x < static_cast<double>(img.width))) {
    return fill;
  }
  const double fy = std::floor(y), fx = std::floor(x);
  const double ty = y - fy, tx = x - fx;
  const auto y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  auto px = [&](long yy, long xx) {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(img.height) || xx >= static_cast<long>(img.width))
      return fill;
    return img.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
  };
  const double a = px(y0, x0), b = px(y0, x0 + 1), d = px(y0 + 1, x0), e = px(y0 + 1, x0 + 1);
  return (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * d + tx * e);
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double t;
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> v(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double src = out == 1 ? (static_cast<double>(in) - 1.0) / 2.0
                                : static_cast<double>(i) * static_cast<double>(in - 1) /
                                      static_cast<double>(out - 1);
    auto i0 = static_cast<std::size_t>(std::floor(src));
    i0 = std::min(i0, in - 1);
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    v[i] = {i0, i1, src - static_cast<double>(i0)};
  }
  return v;
}

}  // namespace

Image resize(const Image& img, std::size_t height, std::size_t width) {
  if (img.height == 0 || img.width == 0) throw DimensionError("resize: empty source image");
  if (height == 0 || width == 0) throw ArgumentError("resize: empty target size");
  if (height == img.height && width == img.width) return img;
  const auto ty = taps(img.height, height);
  const auto tx = taps(img.width, width);
  Image out(img.channels, height, width);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const Tap& a = ty[y];
        const Tap& b = tx[x];
        const double top = (1 - b.t) * img.at(c, a.i0, b.i0) + b.t * img.at(c, a.i0, b.i1);
        const double bot = (1 - b.t) * img.at(c, a.i1, b.i0) + b.t * img.at(c, a.i1, b.i1);
        out.at(c, y, x) = (1 - a.t) * top + a.t * bot;
      }
  return out;
}

Tensor4 to_tensor(std::span<const Image> images) {
  if (images.empty()) return Tensor4(Shape{0, 3, 0, 0});
  const Image& f = images.front();
  Tensor4 t(Shape{images.size(), f.channels, f.height, f.width});
  auto dst = t.data();
  const std::size_t per = f.data.size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& im = images[i];
    if (im.channels != f.channels || im.height != f.height || im.width != f.width) {
      throw DimensionError("to_tensor: images differ in size");
    }
    std::copy(im.data.begin(), im.data.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return t;
}

Image from_tensor(const Tensor4& t, std::size_t index) {
  const Shape s = t.shape();
  if (index >= s.n) throw ArgumentError("from_tensor: index out of range");
  Image im(s.c, s.h, s.w);
  const auto src = t.data();
  const std::size_t per = im.data.size();
  std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(index * per), per, im.data.begin());
  return im;
}

}  // namespace dkcnet
