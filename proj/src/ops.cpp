#include "dunet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace dunet::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

bool is_pointwise(const Conv2dSpec& s) {
  return s.kernel == 1 && s.stride == 1 && s.pad == 0;
}

void im2col(const double* x, int c, int h, int w, const Conv2dSpec& s,
            int ho, int wo, double* col) {
  const int k = s.kernel;
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          double* out = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + wo, 0.0);
            continue;
          }
          const double* in = x + (static_cast<std::size_t>(ch) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            out[ox] = (ix >= 0 && ix < w) ? in[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int c, int h, int w, const Conv2dSpec& s,
                int ho, int wo, double* x) {
  const int k = s.kernel;
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row =
            col + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* out = x + (static_cast<std::size_t>(ch) * h + iy) * w;
          const double* in = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix >= 0 && ix < w) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Shape4 conv2d_output_shape(const Shape4& in, const Conv2dSpec& spec) {
  if (in.c != spec.in_channels) {
    throw ShapeError("conv2d expects " + std::to_string(spec.in_channels) +
                     " input channels, got " + std::to_string(in.c));
  }
  const int ho = spec.out_extent(in.h);
  const int wo = spec.out_extent(in.w);
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d output would be empty");
  return {in.n, spec.out_channels, ho, wo};
}

void conv2d_forward(std::span<const double> x, const Shape4& xs,
                    std::span<const double> w, std::span<const double> bias,
                    const Conv2dSpec& spec, double scale,
                    std::span<double> y) {
  const Shape4 ys = conv2d_output_shape(xs, spec);
  const int kdim = spec.in_channels * spec.kernel * spec.kernel;
  const int p = ys.h * ys.w;
  if (w.size() != static_cast<std::size_t>(spec.out_channels) * kdim ||
      y.size() != ys.size() || x.size() != xs.size()) {
    throw ShapeError("conv2d buffer sizes do not match");
  }
  ConstMap wm(w.data(), spec.out_channels, kdim);
  std::vector<double> col;
  if (!is_pointwise(spec)) col.resize(static_cast<std::size_t>(kdim) * p);
  for (int b = 0; b < xs.n; ++b) {
    const double* xb = x.data() + b * xs.c * xs.plane();
    const double* src = xb;
    if (!is_pointwise(spec)) {
      im2col(xb, xs.c, xs.h, xs.w, spec, ys.h, ys.w, col.data());
      src = col.data();
    }
    MutMap ym(y.data() + b * ys.c * ys.plane(), ys.c, p);
    ym.noalias() = wm * ConstMap(src, kdim, p);
    if (scale != 1.0) ym *= scale;
    if (!bias.empty()) {
      for (int o = 0; o < ys.c; ++o) ym.row(o).array() += bias[o];
    }
  }
}

void conv2d_backward(std::span<const double> x, const Shape4& xs,
                     std::span<const double> w, std::span<const double> dy,
                     const Conv2dSpec& spec, double scale,
                     std::span<double> dx, std::span<double> dw,
                     std::span<double> db) {
  const Shape4 ys = conv2d_output_shape(xs, spec);
  const int kdim = spec.in_channels * spec.kernel * spec.kernel;
  const int p = ys.h * ys.w;
  ConstMap wm(w.data(), spec.out_channels, kdim);
  MutMap dwm(dw.data(), spec.out_channels, kdim);
  std::vector<double> col(static_cast<std::size_t>(kdim) * p);
  RowMat dys(ys.c, p);
  RowMat dcol;
  for (int b = 0; b < xs.n; ++b) {
    const double* xb = x.data() + b * xs.c * xs.plane();
    const double* dyb = dy.data() + b * ys.c * ys.plane();
    dys = ConstMap(dyb, ys.c, p);
    if (!db.empty()) {
      for (int o = 0; o < ys.c; ++o) db[o] += dys.row(o).sum();
    }
    if (scale != 1.0) dys *= scale;
    const double* src = xb;
    if (!is_pointwise(spec)) {
      im2col(xb, xs.c, xs.h, xs.w, spec, ys.h, ys.w, col.data());
      src = col.data();
    }
    dwm.noalias() += dys * ConstMap(src, kdim, p).transpose();
    if (dx.empty()) continue;
    double* dxb = dx.data() + b * xs.c * xs.plane();
    if (is_pointwise(spec)) {
      MutMap(dxb, kdim, p).noalias() += wm.transpose() * dys;
    } else {
      dcol.noalias() = wm.transpose() * dys;
      col2im_add(dcol.data(), xs.c, xs.h, xs.w, spec, ys.h, ys.w, dxb);
    }
  }
}

BatchNormStats batchnorm_forward_train(std::span<const double> x,
                                       const Shape4& xs,
                                       std::span<const double> gamma,
                                       std::span<const double> beta,
                                       std::span<double> y) {
  const std::size_t plane = xs.plane();
  const double m = static_cast<double>(xs.n) * plane;
  BatchNormStats st{std::vector<double>(xs.c), std::vector<double>(xs.c)};
  for (int c = 0; c < xs.c; ++c) {
    double sum = 0.0;
    for (int b = 0; b < xs.n; ++b) {
      const double* p = x.data() + (static_cast<std::size_t>(b) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / m;
    double sq = 0.0;
    for (int b = 0; b < xs.n; ++b) {
      const double* p = x.data() + (static_cast<std::size_t>(b) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    const double inv = 1.0 / std::sqrt(sq / m + kBatchNormEps);
    st.mean[c] = mean;
    st.inv_std[c] = inv;
    for (int b = 0; b < xs.n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        y[off + i] = gamma[c] * ((x[off + i] - mean) * inv) + beta[c];
      }
    }
  }
  return st;
}

void batchnorm_forward_eval(std::span<const double> x, const Shape4& xs,
                            std::span<const double> gamma,
                            std::span<const double> beta,
                            std::span<const double> running_mean,
                            std::span<const double> running_var,
                            std::span<double> y) {
  const std::size_t plane = xs.plane();
  for (int c = 0; c < xs.c; ++c) {
    const double inv = 1.0 / std::sqrt(running_var[c] + kBatchNormEps);
    for (int b = 0; b < xs.n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        y[off + i] = gamma[c] * ((x[off + i] - running_mean[c]) * inv) + beta[c];
      }
    }
  }
}

void batchnorm_update_running(const Shape4& xs, const BatchNormStats& stats,
                              std::span<double> running_mean,
                              std::span<double> running_var) {
  const double m = static_cast<double>(xs.n) * xs.plane();
  for (int c = 0; c < xs.c; ++c) {
    const double inv = stats.inv_std[c];
    double var = 1.0 / (inv * inv) - kBatchNormEps;
    if (m > 1) var *= m / (m - 1);
    running_mean[c] = (1 - kBatchNormMomentum) * running_mean[c] +
                      kBatchNormMomentum * stats.mean[c];
    running_var[c] =
        (1 - kBatchNormMomentum) * running_var[c] + kBatchNormMomentum * var;
  }
}

void batchnorm_backward(std::span<const double> x, const Shape4& xs,
                        std::span<const double> gamma,
                        const BatchNormStats& stats,
                        std::span<const double> dy, std::span<double> dx,
                        std::span<double> dgamma, std::span<double> dbeta) {
  const std::size_t plane = xs.plane();
  const double m = static_cast<double>(xs.n) * plane;
  for (int c = 0; c < xs.c; ++c) {
    const double mean = stats.mean[c];
    const double inv = stats.inv_std[c];
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int b = 0; b < xs.n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (x[off + i] - mean) * inv;
        sum_dy += dy[off + i];
        sum_dy_xhat += dy[off + i] * xhat;
      }
    }
    dgamma[c] += sum_dy_xhat;
    dbeta[c] += sum_dy;
    const double k = gamma[c] * inv / m;
    for (int b = 0; b < xs.n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (x[off + i] - mean) * inv;
        dx[off + i] += k * (m * dy[off + i] - sum_dy - xhat * sum_dy_xhat);
      }
    }
  }
}

void relu_forward(std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::span<const double> y, std::span<const double> dy,
                   std::span<double> dx) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] > 0.0) dx[i] += dy[i];
  }
}

std::vector<std::uint32_t> maxpool2_forward(std::span<const double> x,
                                            const Shape4& xs,
                                            std::span<double> y) {
  if (xs.h % 2 != 0 || xs.w % 2 != 0) {
    throw ShapeError("maxpool2 needs even spatial extents, got " + to_string(xs));
  }
  const int ho = xs.h / 2;
  const int wo = xs.w / 2;
  std::vector<std::uint32_t> arg(static_cast<std::size_t>(xs.n) * xs.c * ho * wo);
  std::size_t o = 0;
  for (int bc = 0; bc < xs.n * xs.c; ++bc) {
    const std::size_t base = static_cast<std::size_t>(bc) * xs.plane();
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox, ++o) {
        std::size_t best = base + static_cast<std::size_t>(2 * oy) * xs.w + 2 * ox;
        const std::size_t cand[3] = {best + 1, best + xs.w, best + xs.w + 1};
        for (std::size_t c : cand) {
          if (x[c] > x[best]) best = c;
        }
        arg[o] = static_cast<std::uint32_t>(best);
        y[o] = x[best];
      }
    }
  }
  return arg;
}

void maxpool2_backward(const std::vector<std::uint32_t>& argmax,
                       std::span<const double> dy, std::span<double> dx) {
  for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += dy[i];
}

void upsample2_forward(std::span<const double> x, const Shape4& xs,
                       std::span<double> y) {
  const int wo = xs.w * 2;
  for (int bc = 0; bc < xs.n * xs.c; ++bc) {
    const double* in = x.data() + static_cast<std::size_t>(bc) * xs.plane();
    double* out = y.data() + static_cast<std::size_t>(bc) * xs.plane() * 4;
    for (int iy = 0; iy < xs.h; ++iy) {
      for (int ix = 0; ix < xs.w; ++ix) {
        const double v = in[static_cast<std::size_t>(iy) * xs.w + ix];
        double* o = out + static_cast<std::size_t>(2 * iy) * wo + 2 * ix;
        o[0] = v;
        o[1] = v;
        o[wo] = v;
        o[wo + 1] = v;
      }
    }
  }
}

void upsample2_backward(std::span<const double> dy, const Shape4& xs,
                        std::span<double> dx) {
  const int wo = xs.w * 2;
  for (int bc = 0; bc < xs.n * xs.c; ++bc) {
    double* out = dx.data() + static_cast<std::size_t>(bc) * xs.plane();
    const double* in = dy.data() + static_cast<std::size_t>(bc) * xs.plane() * 4;
    for (int iy = 0; iy < xs.h; ++iy) {
      for (int ix = 0; ix < xs.w; ++ix) {
        const double* g = in + static_cast<std::size_t>(2 * iy) * wo + 2 * ix;
        out[static_cast<std::size_t>(iy) * xs.w + ix] += g[0] + g[1] + g[wo] + g[wo + 1];
      }
    }
  }
}

void concat_forward(std::span<const std::span<const double>> parts,
                    std::span<const Shape4> shapes, std::span<double> y) {
  if (parts.empty() || parts.size() != shapes.size()) {
    throw ShapeError("concat needs one shape per input");
  }
  int total = 0;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& s = shapes[i];
    if (s.n != shapes[0].n || s.h != shapes[0].h || s.w != shapes[0].w) {
      throw ShapeError("concat input " + to_string(s) + " differs from " + to_string(shapes[0]));
    }
    if (parts[i].size() != s.size()) throw ShapeError("concat input size does not match its shape");
    total += s.c;
  }
  const std::size_t plane = shapes.front().plane();
  if (y.size() != static_cast<std::size_t>(shapes[0].n) * total * plane) {
    throw ShapeError("concat output size does not match");
  }
  for (int b = 0; b < shapes.front().n; ++b) {
    double* dst = y.data() + static_cast<std::size_t>(b) * total * plane;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const std::size_t len = static_cast<std::size_t>(shapes[i].c) * plane;
      const double* src = parts[i].data() + b * len;
      std::copy(src, src + len, dst);
      dst += len;
    }
  }
}

void concat_backward(std::span<const double> dy,
                     std::span<const Shape4> shapes,
                     std::span<const std::span<double>> dparts) {
  int total = 0;
  for (const auto& s : shapes) total += s.c;
  const std::size_t plane = shapes.front().plane();
  for (int b = 0; b < shapes.front().n; ++b) {
    const double* src = dy.data() + static_cast<std::size_t>(b) * total * plane;
    for (std::size_t i = 0; i < dparts.size(); ++i) {
      const std::size_t len = static_cast<std::size_t>(shapes[i].c) * plane;
      double* dst = dparts[i].data() + b * len;
      for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
      src += len;
    }
  }
}

}  // namespace dunet::ops
