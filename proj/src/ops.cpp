#include "dkcnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "dkcnet/errors.hpp"

namespace dkcnet {

namespace {

using std::ptrdiff_t;

// Output rows y in [lo, hi) whose tap (y * stride + offset) lands inside [0, extent).
struct Range {
  ptrdiff_t lo = 0;
  ptrdiff_t hi = 0;
};

Range valid_range(ptrdiff_t offset, ptrdiff_t stride, ptrdiff_t extent, ptrdiff_t out) {
  // smallest y with y*stride + offset >= 0
  ptrdiff_t lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  // largest y with y*stride + offset <= extent - 1
  ptrdiff_t last = extent - 1 - offset;
  ptrdiff_t hi = last < 0 ? 0 : last / stride + 1;
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
  return {lo, hi};
}

bool is_channel_broadcast(const Shape& x, const Shape& y) {
  return y.n == x.n && y.c == x.c && y.h == 1 && y.w == 1 && (x.h != 1 || x.w != 1);
}

}  // namespace

AxisPadding axis_padding(std::size_t input, std::size_t kernel, const ConvOptions& opt) {
  if (opt.dilation < 1) throw ArgumentError("dilation must be >= 1");
  if (opt.stride < 1) throw ArgumentError("stride must be >= 1");
  if (kernel < 1) throw DimensionError("kernel extent must be >= 1");
  const std::size_t eff = effective_extent(kernel, opt.dilation);
  AxisPadding p;
  if (opt.padding == Padding::kValid) {
    if (eff > input) {
      throw DimensionError("effective kernel extent " + std::to_string(eff) +
                           " exceeds input extent " + std::to_string(input));
    }
    p.output = (input - eff) / opt.stride + 1;
    return p;
  }
  p.output = (input + opt.stride - 1) / opt.stride;
  const std::size_t needed = (p.output - 1) * opt.stride + eff;
  const std::size_t total = needed > input ? needed - input : 0;
  p.before = total / 2;
  p.after = total - p.before;
  if (eff > input + total) throw DimensionError("kernel does not fit padded input");
  return p;
}

Var conv2d(const Var& x, const Var& kernel, const std::optional<Var>& bias,
           const ConvOptions& opt) {
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  if (ks.c != xs.c) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(ks.c) +
                         " input channels, input has " + std::to_string(xs.c));
  }
  if (bias && !(bias->shape() == Shape{1, ks.n, 1, 1})) {
    throw DimensionError("conv2d: bias shape " + bias->shape().str());
  }
  const AxisPadding ph = axis_padding(xs.h, ks.h, opt);
  const AxisPadding pw = axis_padding(xs.w, ks.w, opt);
  const Shape os{xs.n, ks.n, ph.output, pw.output};

  const auto s = static_cast<ptrdiff_t>(opt.stride);
  const auto d = static_cast<ptrdiff_t>(opt.dilation);
  const auto H = static_cast<ptrdiff_t>(xs.h);
  const auto W = static_cast<ptrdiff_t>(xs.w);
  const auto OH = static_cast<ptrdiff_t>(os.h);
  const auto OW = static_cast<ptrdiff_t>(os.w);
  const auto pt = static_cast<ptrdiff_t>(ph.before);
  const auto pl = static_cast<ptrdiff_t>(pw.before);

  // Visits every (output row/col, input row/col) pair touched by tap (ky, kx).
  auto for_taps = [=](std::size_t ky, std::size_t kx, auto&& body) {
    const ptrdiff_t oy = static_cast<ptrdiff_t>(ky) * d - pt;
    const ptrdiff_t ox = static_cast<ptrdiff_t>(kx) * d - pl;
    const Range ry = valid_range(oy, s, H, OH);
    const Range rx = valid_range(ox, s, W, OW);
    for (ptrdiff_t y = ry.lo; y < ry.hi; ++y) {
      const ptrdiff_t iy = y * s + oy;
      body(y * OW, iy * W + ox, rx.lo, rx.hi);
    }
  };

  Tensor4 out(os, 0.0);
  const Tensor4& xv = x.value();
  const Tensor4& kv = kernel.value();
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t o = 0; o < ks.n; ++o) {
      double* op = out.plane(n, o).data();
      if (bias) std::fill_n(op, os.plane(), bias->value()[o]);
      for (std::size_t i = 0; i < xs.c; ++i) {
        const double* ip = xv.plane(n, i).data();
        for (std::size_t ky = 0; ky < ks.h; ++ky) {
          for (std::size_t kx = 0; kx < ks.w; ++kx) {
            const double wv = kv.at(o, i, ky, kx);
            for_taps(ky, kx, [&](ptrdiff_t orow, ptrdiff_t irow, ptrdiff_t lo, ptrdiff_t hi) {
              double* dst = op + orow;
              if (s == 1) {
                for (ptrdiff_t c = lo; c < hi; ++c) dst[c] += wv * ip[irow + c];
              } else {
                for (ptrdiff_t c = lo; c < hi; ++c) dst[c] += wv * ip[irow + c * s];
              }
            });
          }
        }
      }
    }
  }

  std::vector<Var> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return Var::from_op(std::move(out), std::move(inputs), [=](detail::Node& self) {
    const Tensor4& g = self.grad;
    const Tensor4& xin = parent_value(self, 0);
    const Tensor4& k = parent_value(self, 1);
    Tensor4* gx = parent_grad(self, 0);
    Tensor4* gk = parent_grad(self, 1);
    Tensor4* gb = has_bias ? parent_grad(self, 2) : nullptr;
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t o = 0; o < ks.n; ++o) {
        const double* gp = g.plane(n, o).data();
        if (gb) {
          double acc = 0.0;
          for (std::size_t e = 0; e < os.plane(); ++e) acc += gp[e];
          (*gb)[o] += acc;
        }
        for (std::size_t i = 0; i < xs.c; ++i) {
          const double* ip = xin.plane(n, i).data();
          double* gip = gx ? gx->plane(n, i).data() : nullptr;
          for (std::size_t ky = 0; ky < ks.h; ++ky) {
            for (std::size_t kx = 0; kx < ks.w; ++kx) {
              const double wv = k.at(o, i, ky, kx);
              double acc = 0.0;
              for_taps(ky, kx, [&](ptrdiff_t orow, ptrdiff_t irow, ptrdiff_t lo, ptrdiff_t hi) {
                const double* gr = gp + orow;
                for (ptrdiff_t c = lo; c < hi; ++c) acc += gr[c] * ip[irow + c * s];
                if (gip) {
                  for (ptrdiff_t c = lo; c < hi; ++c) gip[irow + c * s] += wv * gr[c];
                }
              });
              if (gk) gk->at(o, i, ky, kx) += acc;
            }
          }
        }
      }
    }
  });
}

BatchNormBuffers BatchNormBuffers::create(std::size_t channels) {
  return {Var(Tensor4(Shape{1, channels, 1, 1}, 0.0)), Var(Tensor4(Shape{1, channels, 1, 1}, 1.0)),
          Var(Tensor4::scalar(0.0))};
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormBuffers& buffers,
               Mode mode, const BatchNormOptions& opt) {
  const Shape xs = x.shape();
  const Shape cs{1, xs.c, 1, 1};
  require_same_shape(gamma.shape(), cs, "batch_norm gamma");
  require_same_shape(beta.shape(), cs, "batch_norm beta");
  require_same_shape(buffers.running_mean.shape(), cs, "batch_norm running mean");
  require_same_shape(buffers.running_var.shape(), cs, "batch_norm running var");
  const std::size_t m = xs.n * xs.plane();

  std::vector<double> mean(xs.c), inv_std(xs.c);
  if (mode == Mode::kTrain) {
    if (m < 2) throw ArgumentError("batch_norm in train mode needs n*h*w >= 2 per channel");
    Tensor4& rm = buffers.running_mean.mutable_value();
    Tensor4& rv = buffers.running_var.mutable_value();
    for (std::size_t c = 0; c < xs.c; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < xs.n; ++n)
        for (double v : x.value().plane(n, c)) acc += v;
      const double mu = acc / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t n = 0; n < xs.n; ++n)
        for (double v : x.value().plane(n, c)) sq += (v - mu) * (v - mu);
      const double var = sq / static_cast<double>(m);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + opt.eps);
      rm[c] = (1.0 - opt.momentum) * rm[c] + opt.momentum * mu;
      rv[c] = (1.0 - opt.momentum) * rv[c] +
              opt.momentum * sq / static_cast<double>(m - 1);
    }
    buffers.tracked.mutable_value()[0] += 1.0;
  } else {
    if (buffers.tracked.value()[0] <= 0.0) {
      throw StateError("batch_norm in eval mode before any running statistics were recorded");
    }
    for (std::size_t c = 0; c < xs.c; ++c) {
      mean[c] = buffers.running_mean.value()[c];
      inv_std[c] = 1.0 / std::sqrt(buffers.running_var.value()[c] + opt.eps);
    }
  }

  Tensor4 xhat(xs);
  Tensor4 out(xs);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      auto src = x.value().plane(n, c);
      auto xh = xhat.plane(n, c);
      auto dst = out.plane(n, c);
      const double g = gamma.value()[c];
      const double b = beta.value()[c];
      for (std::size_t e = 0; e < src.size(); ++e) {
        xh[e] = (src[e] - mean[c]) * inv_std[c];
        dst[e] = g * xh[e] + b;
      }
    }
  }

  const bool train = mode == Mode::kTrain;
  return Var::from_op(
      std::move(out), {x, gamma, beta},
      [xs, m, train, inv_std = std::move(inv_std), xhat = std::move(xhat)](detail::Node& self) {
        const Tensor4& g = self.grad;
        const Tensor4& gam = parent_value(self, 1);
        Tensor4* gx = parent_grad(self, 0);
        Tensor4* gg = parent_grad(self, 1);
        Tensor4* gbeta = parent_grad(self, 2);
        for (std::size_t c = 0; c < xs.c; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t n = 0; n < xs.n; ++n) {
            auto gp = g.plane(n, c);
            auto xh = xhat.plane(n, c);
            for (std::size_t e = 0; e < gp.size(); ++e) {
              sum_g += gp[e];
              sum_gx += gp[e] * xh[e];
            }
          }
          if (gg) (*gg)[c] += sum_gx;
          if (gbeta) (*gbeta)[c] += sum_g;
          if (!gx) continue;
          const double md = static_cast<double>(m);
          for (std::size_t n = 0; n < xs.n; ++n) {
            auto gp = g.plane(n, c);
            auto xh = xhat.plane(n, c);
            auto dst = gx->plane(n, c);
            if (train) {
              const double k = gam[c] * inv_std[c] / md;
              for (std::size_t e = 0; e < gp.size(); ++e)
                dst[e] += k * (md * gp[e] - sum_g - xh[e] * sum_gx);
            } else {
              const double k = gam[c] * inv_std[c];
              for (std::size_t e = 0; e < gp.size(); ++e) dst[e] += k * gp[e];
            }
          }
        }
      });
}

Var relu(const Var& x) {
  Tensor4 out(x.shape());
  const auto src = x.value().data();
  auto dst = out.data();
  for (std::size_t e = 0; e < src.size(); ++e) dst[e] = src[e] > 0.0 ? src[e] : 0.0;
  return Var::from_op(std::move(out), {x}, [](detail::Node& self) {
    Tensor4* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto src = parent_value(self, 0).data();
    const auto g = self.grad.data();
    auto dst = gx->data();
    for (std::size_t e = 0; e < src.size(); ++e)
      if (src[e] > 0.0) dst[e] += g[e];
  });
}

Var sigmoid(const Var& x) {
  constexpr double kLo = std::numeric_limits<double>::denorm_min();
  constexpr double kHi = 1.0 - 0x1.0p-53;
  Tensor4 out(x.shape());
  const auto src = x.value().data();
  auto dst = out.data();
  for (std::size_t e = 0; e < src.size(); ++e) {
    const double v = src[e];
    double s;
    if (v >= 0.0) {
      s = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double z = std::exp(v);
      s = z / (1.0 + z);
    }
    dst[e] = std::clamp(s, kLo, kHi);
  }
  return Var::from_op(std::move(out), {x}, [](detail::Node& self) {
    Tensor4* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto y = self.value.data();
    const auto g = self.grad.data();
    auto dst = gx->data();
    for (std::size_t e = 0; e < y.size(); ++e) dst[e] += g[e] * y[e] * (1.0 - y[e]);
  });
}

Var global_avg_pool(const Var& x) {
  const Shape xs = x.shape();
  if (xs.plane() == 0) throw DimensionError("global_avg_pool on empty spatial extent");
  Tensor4 out(Shape{xs.n, xs.c, 1, 1});
  const double count = static_cast<double>(xs.plane());
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      double acc = 0.0;
      for (double v : x.value().plane(n, c)) acc += v;
      out.at(n, c, 0, 0) = acc / count;
    }
  }
  return Var::from_op(std::move(out), {x}, [xs, count](detail::Node& self) {
    Tensor4* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t c = 0; c < xs.c; ++c) {
        const double gv = self.grad.at(n, c, 0, 0) / count;
        for (double& v : gx->plane(n, c)) v += gv;
      }
    }
  });
}

Var global_max_pool(const Var& x) {
  const Shape xs = x.shape();
  if (xs.plane() == 0) throw DimensionError("global_max_pool on empty spatial extent");
  Tensor4 out(Shape{xs.n, xs.c, 1, 1});
  std::vector<std::size_t> argmax(xs.n * xs.c);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      auto p = x.value().plane(n, c);
      // max_element returns the first maximum
      const auto it = std::max_element(p.begin(), p.end());
      argmax[n * xs.c + c] = static_cast<std::size_t>(it - p.begin());
      out.at(n, c, 0, 0) = *it;
    }
  }
  return Var::from_op(std::move(out), {x}, [xs, argmax = std::move(argmax)](detail::Node& self) {
    Tensor4* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t n = 0; n < xs.n; ++n)
      for (std::size_t c = 0; c < xs.c; ++c)
        gx->plane(n, c)[argmax[n * xs.c + c]] += self.grad.at(n, c, 0, 0);
  });
}

Var fully_connected(const Var& x, const Var& weight, const std::optional<Var>& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const std::size_t in = xs.c * xs.plane();
  if (ws.h != 1 || ws.w != 1 || ws.c != in) {
    throw DimensionError("fully_connected: weight " + ws.str() + " vs input features " +
                         std::to_string(in));
  }
  const std::size_t outc = ws.n;
  if (bias && !(bias->shape() == Shape{1, outc, 1, 1})) {
    throw DimensionError("fully_connected: bias shape " + bias->shape().str());
  }
  Tensor4 out(Shape{xs.n, outc, 1, 1});
  const auto xv = x.value().data();
  const auto wv = weight.value().data();
  for (std::size_t n = 0; n < xs.n; ++n) {
    const double* row = xv.data() + n * in;
    for (std::size_t o = 0; o < outc; ++o) {
      const double* wr = wv.data() + o * in;
      double acc = bias ? bias->value()[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * row[i];
      out[n * outc + o] = acc;
    }
  }
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return Var::from_op(std::move(out), std::move(inputs), [=](detail::Node& self) {
    const auto g = self.grad.data();
    const auto xin = parent_value(self, 0).data();
    const auto w = parent_value(self, 1).data();
    Tensor4* gx = parent_grad(self, 0);
    Tensor4* gw = parent_grad(self, 1);
    Tensor4* gb = has_bias ? parent_grad(self, 2) : nullptr;
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t o = 0; o < outc; ++o) {
        const double go = g[n * outc + o];
        if (gb) (*gb)[o] += go;
        if (gw) {
          double* dst = gw->data().data() + o * in;
          const double* row = xin.data() + n * in;
          for (std::size_t i = 0; i < in; ++i) dst[i] += go * row[i];
        }
        if (gx) {
          double* dst = gx->data().data() + n * in;
          const double* wr = w.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) dst[i] += go * wr[i];
        }
      }
    }
  });
}

Var dropout(const Var& x, double rate, Rng& rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("dropout rate must lie in [0, 1)");
  if (mode == Mode::kEval || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.value().size());
  Tensor4 out(x.shape());
  const auto src = x.value().data();
  for (std::size_t e = 0; e < src.size(); ++e) {
    (*mask)[e] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[e] = src[e] * (*mask)[e];
  }
  return Var::from_op(std::move(out), {x}, [mask](detail::Node& self) {
    Tensor4* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto g = self.grad.data();
    auto dst = gx->data();
    for (std::size_t e = 0; e < g.size(); ++e) dst[e] += g[e] * (*mask)[e];
  });
}

namespace {

enum class Binary { kAdd, kMul };

Var binary_op(const Var& x, const Var& y, Binary kind) {
  const Shape xs = x.shape();
  const Shape ys = y.shape();
  const bool bcast = !(xs == ys);
  if (bcast && !is_channel_broadcast(xs, ys)) {
    throw DimensionError(std::string(kind == Binary::kAdd ? "add" : "mul") +
                         ": incompatible shapes " + xs.str() + " and " + ys.str());
  }
  const std::size_t plane = xs.plane();
  Tensor4 out(xs);
  const auto xv = x.value().data();
  const auto yv = y.value().data();
  for (std::size_t e = 0; e < xv.size(); ++e) {
    const double b = bcast ? yv[e / plane] : yv[e];
    out[e] = kind == Binary::kAdd ? xv[e] + b : xv[e] * b;
  }
  return Var::from_op(std::move(out), {x, y}, [=](detail::Node& self) {
    const auto g = self.grad.data();
    Tensor4* gx = parent_grad(self, 0);
    Tensor4* gy = parent_grad(self, 1);
    const auto xin = parent_value(self, 0).data();
    const auto yin = parent_value(self, 1).data();
    for (std::size_t e = 0; e < g.size(); ++e) {
      const std::size_t ye = bcast ? e / plane : e;
      if (kind == Binary::kAdd) {
        if (gx) (*gx)[e] += g[e];
        if (gy) (*gy)[ye] += g[e];
      } else {
        if (gx) (*gx)[e] += g[e] * yin[ye];
        if (gy) (*gy)[ye] += g[e] * xin[e];
      }
    }
  });
}

}  // namespace

Var add(const Var& x, const Var& y) { return binary_op(x, y, Binary::kAdd); }
Var mul(const Var& x, const Var& y) { return binary_op(x, y, Binary::kMul); }

Var scale(const Var& x, double factor) {
  Tensor4 out(x.shape());
  const auto src = x.value().data();
  for (std::size_t e = 0; e < src.size(); ++e) out[e] = src[e] * factor;
  return Var::from_op(std::move(out), {x}, [factor](detail::Node& self) {
    Tensor4* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto g = self.grad.data();
    for (std::size_t e = 0; e < g.size(); ++e) (*gx)[e] += g[e] * factor;
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return Var::from_op(Tensor4::scalar(acc), {x}, [](detail::Node& self) {
    Tensor4* gx = parent_grad(self, 0);
    if (!gx) return;
    const double g = self.grad[0];
    for (double& v : gx->data()) v += g;
  });
}

Var weighted_sum(const Var& x, const Tensor4& weights) {
  require_same_shape(x.shape(), weights.shape(), "weighted_sum");
  double acc = 0.0;
  const auto xv = x.value().data();
  for (std::size_t e = 0; e < xv.size(); ++e) acc += xv[e] * weights[e];
  return Var::from_op(Tensor4::scalar(acc), {x}, [weights](detail::Node& self) {
    Tensor4* gx = parent_grad(self, 0);
    if (!gx) return;
    const double g = self.grad[0];
    for (std::size_t e = 0; e < weights.size(); ++e) (*gx)[e] += g * weights[e];
  });
}

Var permute_channels(const Var& x, std::span<const std::size_t> perm) {
  const Shape xs = x.shape();
  if (perm.size() != xs.c) throw DimensionError("permute_channels: permutation length mismatch");
  std::vector<std::size_t> p(perm.begin(), perm.end());
  Tensor4 out(xs);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t j = 0; j < xs.c; ++j) {
      if (p[j] >= xs.c) throw ArgumentError("permute_channels: index out of range");
      auto src = x.value().plane(n, p[j]);
      std::copy(src.begin(), src.end(), out.plane(n, j).begin());
    }
  }
  return Var::from_op(std::move(out), {x}, [xs, p = std::move(p)](detail::Node& self) {
    Tensor4* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t j = 0; j < xs.c; ++j) {
        auto g = self.grad.plane(n, j);
        auto dst = gx->plane(n, p[j]);
        for (std::size_t e = 0; e < g.size(); ++e) dst[e] += g[e];
      }
    }
  });
}

}  // namespace dkcnet
