#pragma once

// Forward and adjoint arithmetic for the network primitives, on plain
// tensors. autodiff.hpp records these on a Graph; nothing here allocates
// graph state.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <vector>

#include "tgcnn/tensor.hpp"

namespace tgcnn::kernels {

enum class Padding { same_zero, valid };

inline std::size_t left_pad(Padding p, std::size_t window) {
  return p == Padding::same_zero ? window / 2 : 0;
}

inline std::size_t conv_out_len(Padding p, std::size_t len,
                                std::size_t window) {
  if (p == Padding::same_zero) return len;
  if (len < window) {
    throw ShapeError("conv: sequence length " + std::to_string(len) +
                     " shorter than window " + std::to_string(window) +
                     " under valid padding");
  }
  return len - window + 1;
}

struct ConvGrads {
  Tensor dx;
  Tensor dkernel;
  std::optional<Tensor> dbias;
};

// Shared core of conv1d/conv2d. Input viewed as [B, in, T, cols], kernel as
// [out, in, w]; output [B, out, T', cols]. conv1d is cols == 1. Every output
// element sums (in, k) in lexicographic order starting from 0, then adds the
// bias, so a (w x 1) 2D convolution is bit-identical to a 1D convolution of
// each column.
struct ConvGeometry {
  std::size_t batch, in, out, len, cols, window, out_len, pad;
};

inline std::vector<double> conv_forward_core(const ConvGeometry& g,
                                             std::span<const double> x,
                                             std::span<const double> k,
                                             const std::optional<Tensor>& bias) {
  std::vector<double> y(g.batch * g.out * g.out_len * g.cols, 0.0);
  const std::size_t plane_in = g.len * g.cols;
  const std::size_t plane_out = g.out_len * g.cols;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t o = 0; o < g.out; ++o) {
      double* dst = y.data() + (b * g.out + o) * plane_out;
      for (std::size_t i = 0; i < g.in; ++i) {
        const double* src = x.data() + (b * g.in + i) * plane_in;
        for (std::size_t kk = 0; kk < g.window; ++kk) {
          const double w = k[(o * g.in + i) * g.window + kk];
          // Output step t reads input row t + kk - pad.
          for (std::size_t t = 0; t < g.out_len; ++t) {
            const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(t + kk) -
                                       static_cast<std::ptrdiff_t>(g.pad);
            if (row < 0 || row >= static_cast<std::ptrdiff_t>(g.len)) continue;
            const double* s = src + static_cast<std::size_t>(row) * g.cols;
            double* d = dst + t * g.cols;
            for (std::size_t c = 0; c < g.cols; ++c) d[c] += w * s[c];
          }
        }
      }
      if (bias) {
        const double bo = (*bias)[o];
        for (std::size_t p = 0; p < plane_out; ++p) dst[p] += bo;
      }
    }
  }
  return y;
}

inline void conv_backward_core(const ConvGeometry& g, std::span<const double> x,
                               std::span<const double> k,
                               std::span<const double> dy, bool want_dx,
                               std::vector<double>& dx, std::vector<double>& dk,
                               std::vector<double>* dbias) {
  const std::size_t plane_in = g.len * g.cols;
  const std::size_t plane_out = g.out_len * g.cols;
  if (want_dx) dx.assign(x.size(), 0.0);
  dk.assign(k.size(), 0.0);
  if (dbias) dbias->assign(g.out, 0.0);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t o = 0; o < g.out; ++o) {
      const double* gy = dy.data() + (b * g.out + o) * plane_out;
      if (dbias) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane_out; ++p) acc += gy[p];
        (*dbias)[o] += acc;
      }
      for (std::size_t i = 0; i < g.in; ++i) {
        const double* src = x.data() + (b * g.in + i) * plane_in;
        double* gx = want_dx ? dx.data() + (b * g.in + i) * plane_in : nullptr;
        for (std::size_t kk = 0; kk < g.window; ++kk) {
          const std::size_t widx = (o * g.in + i) * g.window + kk;
          const double w = k[widx];
          double acc = 0.0;
          for (std::size_t t = 0; t < g.out_len; ++t) {
            const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(t + kk) -
                                       static_cast<std::ptrdiff_t>(g.pad);
            if (row < 0 || row >= static_cast<std::ptrdiff_t>(g.len)) continue;
            const std::size_t r = static_cast<std::size_t>(row) * g.cols;
            const double* gyt = gy + t * g.cols;
            for (std::size_t c = 0; c < g.cols; ++c) {
              acc += gyt[c] * src[r + c];
              if (gx) gx[r + c] += gyt[c] * w;
            }
          }
          dk[widx] += acc;
        }
      }
    }
  }
}

// x [B, in, T], kernel [out, in, w], bias [out] -> [B, out, T'].
inline ConvGeometry conv1d_geometry(const Shape& x, const Shape& k,
                                    Padding padding) {
  if (x.size() != 3 || k.size() != 3) {
    throw ShapeError("conv1d: expected x [B,in,T] and kernel [out,in,w]");
  }
  if (x[1] != k[1]) {
    throw ShapeError("conv1d: input has " + std::to_string(x[1]) +
                     " channels, kernel expects " + std::to_string(k[1]));
  }
  return {x[0], x[1], k[0], x[2], 1, k[2], conv_out_len(padding, x[2], k[2]),
          left_pad(padding, k[2])};
}

// x [B, in_maps, T, C], kernel [out_maps, in_maps, w, 1] -> [B, out, T', C].
inline ConvGeometry conv2d_geometry(const Shape& x, const Shape& k,
                                    Padding padding) {
  if (x.size() != 4 || k.size() != 4) {
    throw ShapeError("conv2d: expected x [B,in,T,C] and kernel [out,in,w,1]");
  }
  if (k[3] != 1) throw ShapeError("conv2d: kernel width on variable axis != 1");
  if (x[1] != k[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(x[1]) +
                     " maps, kernel expects " + std::to_string(k[1]));
  }
  return {x[0], x[1], k[0], x[2], x[3], k[2],
          conv_out_len(padding, x[2], k[2]), left_pad(padding, k[2])};
}

inline void check_bias(const std::optional<Tensor>& bias, std::size_t out) {
  if (bias && (bias->rank() != 1 || bias->dim(0) != out)) {
    throw ShapeError("conv: bias shape " + shape_str(bias->shape()) +
                     " does not match " + std::to_string(out) + " outputs");
  }
}

inline Tensor conv1d(const Tensor& x, const Tensor& kernel,
                     const std::optional<Tensor>& bias, Padding padding) {
  const auto g = conv1d_geometry(x.shape(), kernel.shape(), padding);
  check_bias(bias, g.out);
  return Tensor({g.batch, g.out, g.out_len},
                conv_forward_core(g, x.data(), kernel.data(), bias));
}

inline Tensor conv2d(const Tensor& x, const Tensor& kernel,
                     const std::optional<Tensor>& bias, Padding padding) {
  const auto g = conv2d_geometry(x.shape(), kernel.shape(), padding);
  check_bias(bias, g.out);
  return Tensor({g.batch, g.out, g.out_len, g.cols},
                conv_forward_core(g, x.data(), kernel.data(), bias));
}

inline ConvGrads conv_backward(const ConvGeometry& g, const Tensor& x,
                               const Tensor& kernel, bool has_bias,
                               const Tensor& dy) {
  std::vector<double> dx, dk, db;
  conv_backward_core(g, x.data(), kernel.data(), dy.data(), true, dx, dk,
                     has_bias ? &db : nullptr);
  ConvGrads out{Tensor(x.shape(), std::move(dx)),
                Tensor(kernel.shape(), std::move(dk)), std::nullopt};
  if (has_bias) out.dbias = Tensor({g.out}, std::move(db));
  return out;
}

// ---------------------------------------------------------------------------
// Instance normalization over x [B, C, spatial...].

struct NormStats {
  std::vector<double> mean;     // [B*C]
  std::vector<double> inv_std;  // [B*C]
};

inline NormStats instance_norm_stats(const Tensor& x, double eps) {
  if (x.rank() < 2) throw ShapeError("instance_norm: rank must be >= 2");
  const std::size_t groups = x.dim(0) * x.dim(1);
  const std::size_t n = x.size() / groups;
  NormStats st{std::vector<double>(groups), std::vector<double>(groups)};
  std::vector<double> sq(n);
  for (std::size_t gidx = 0; gidx < groups; ++gidx) {
    const auto d = x.data().subspan(gidx * n, n);
    // Order-independent sums so the statistics are invariant under any
    // permutation of spatial positions.
    const double mean = exact_sum(d) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) sq[i] = (d[i] - mean) * (d[i] - mean);
    const double var = exact_sum(sq) / static_cast<double>(n);
    st.mean[gidx] = mean;
    st.inv_std[gidx] = 1.0 / std::sqrt(var + eps);
  }
  return st;
}

inline void check_norm_params(const Tensor& x, const Tensor& scale,
                              const Tensor& shift) {
  if (x.rank() < 2) throw ShapeError("instance_norm: rank must be >= 2");
  const std::size_t c = x.dim(1);
  if (scale.shape() != Shape{c} || shift.shape() != Shape{c}) {
    throw ShapeError("instance_norm: scale/shift must have shape [" +
                     std::to_string(c) + "]");
  }
}

inline Tensor instance_norm(const Tensor& x, const Tensor& scale,
                            const Tensor& shift, const NormStats& st) {
  const std::size_t batch = x.dim(0), ch = x.dim(1);
  const std::size_t n = x.size() / (batch * ch);
  std::vector<double> y(x.size());
  const auto d = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t gidx = b * ch + c;
      const double m = st.mean[gidx], inv = st.inv_std[gidx];
      const double s = scale[c], t = shift[c];
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t p = gidx * n + i;
        y[p] = s * ((d[p] - m) * inv) + t;
      }
    }
  }
  return Tensor(x.shape(), std::move(y));
}

struct NormGrads {
  Tensor dx, dscale, dshift;
};

inline NormGrads instance_norm_backward(const Tensor& x, const Tensor& scale,
                                        const NormStats& st, const Tensor& dy) {
  const std::size_t batch = x.dim(0), ch = x.dim(1);
  const std::size_t n = x.size() / (batch * ch);
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> dx(x.size()), dscale(ch, 0.0), dshift(ch, 0.0);
  std::vector<double> xhat(n), gh(n);
  const auto d = x.data();
  const auto g = dy.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t gidx = b * ch + c;
      const double m = st.mean[gidx], inv = st.inv_std[gidx];
      double sum_gh = 0.0, sum_gh_xh = 0.0, sum_g = 0.0, sum_g_xh = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t p = gidx * n + i;
        xhat[i] = (d[p] - m) * inv;
        gh[i] = g[p] * scale[c];
        sum_gh += gh[i];
        sum_gh_xh += gh[i] * xhat[i];
        sum_g += g[p];
        sum_g_xh += g[p] * xhat[i];
      }
      const double mean_gh = sum_gh * inv_n, mean_gh_xh = sum_gh_xh * inv_n;
      for (std::size_t i = 0; i < n; ++i) {
        dx[gidx * n + i] = inv * (gh[i] - mean_gh - xhat[i] * mean_gh_xh);
      }
      dscale[c] += sum_g_xh;
      dshift[c] += sum_g;
    }
  }
  return {Tensor(x.shape(), std::move(dx)), Tensor({ch}, std::move(dscale)),
          Tensor({ch}, std::move(dshift))};
}

// ---------------------------------------------------------------------------
// Dense projection on the last axis: x [..., in], weight [out, in].

inline Shape dense_out_shape(const Shape& x, const Shape& w, const Shape& b) {
  if (w.size() != 2 || b != Shape{w[0]}) {
    throw ShapeError("dense: expected weight [out,in] and bias [out]");
  }
  if (x.back() != w[1]) {
    throw ShapeError("dense: input width " + std::to_string(x.back()) +
                     " != weight input " + std::to_string(w[1]));
  }
  Shape out = x;
  out.back() = w[0];
  return out;
}

inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& bias) {
  Shape out_shape = dense_out_shape(x.shape(), w.shape(), bias.shape());
  const std::size_t in = w.dim(1), out = w.dim(0);
  const std::size_t rows = x.size() / in;
  std::vector<double> y(rows * out);
  const auto xd = x.data();
  const auto wd = w.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = wd.data() + o * in;
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xr[i];
      y[r * out + o] = acc + bias[o];
    }
  }
  return Tensor(std::move(out_shape), std::move(y));
}

struct DenseGrads {
  Tensor dx, dw, db;
};

inline DenseGrads dense_backward(const Tensor& x, const Tensor& w,
                                 const Tensor& dy) {
  const std::size_t in = w.dim(1), out = w.dim(0);
  const std::size_t rows = x.size() / in;
  std::vector<double> dx(x.size(), 0.0), dw(w.size(), 0.0), db(out, 0.0);
  const auto xd = x.data();
  const auto wd = w.data();
  const auto g = dy.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * in;
    double* dxr = dx.data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double go = g[r * out + o];
      const double* wo = wd.data() + o * in;
      double* dwo = dw.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        dxr[i] += go * wo[i];
        dwo[i] += go * xr[i];
      }
      db[o] += go;
    }
  }
  return {Tensor(x.shape(), std::move(dx)), Tensor(w.shape(), std::move(dw)),
          Tensor({out}, std::move(db))};
}

// ---------------------------------------------------------------------------
// Time mixing: v [B, T, K], weight [T, T], bias [T];
// out[b,t,k] = sum_s weight[t,s] * v[b,s,k] + bias[t].

inline void check_time_mix(const Shape& v, const Shape& w, const Shape& b) {
  if (v.size() != 3) throw ShapeError("time_mix: input must be [B,T,K]");
  const std::size_t t = v[1];
  if (w != Shape{t, t} || b != Shape{t}) {
    throw ShapeError("time_mix: weight must be [" + std::to_string(t) + "x" +
                     std::to_string(t) + "] and bias [" + std::to_string(t) +
                     "], got " + shape_str(w) + " and " + shape_str(b));
  }
}

inline Tensor time_mix(const Tensor& v, const Tensor& w, const Tensor& bias) {
  check_time_mix(v.shape(), w.shape(), bias.shape());
  const std::size_t batch = v.dim(0), len = v.dim(1), k = v.dim(2);
  std::vector<double> y(v.size(), 0.0);
  const auto vd = v.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* vb = vd.data() + b * len * k;
    double* yb = y.data() + b * len * k;
    for (std::size_t t = 0; t < len; ++t) {
      double* yt = yb + t * k;
      for (std::size_t s = 0; s < len; ++s) {
        const double wts = w[t * len + s];
        const double* vs = vb + s * k;
        for (std::size_t c = 0; c < k; ++c) yt[c] += wts * vs[c];
      }
      for (std::size_t c = 0; c < k; ++c) yt[c] += bias[t];
    }
  }
  return Tensor(v.shape(), std::move(y));
}

struct TimeMixGrads {
  Tensor dv, dw, db;
};

inline TimeMixGrads time_mix_backward(const Tensor& v, const Tensor& w,
                                      const Tensor& dy) {
  const std::size_t batch = v.dim(0), len = v.dim(1), k = v.dim(2);
  std::vector<double> dv(v.size(), 0.0), dw(len * len, 0.0), db(len, 0.0);
  const auto vd = v.data();
  const auto g = dy.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* vb = vd.data() + b * len * k;
    const double* gb = g.data() + b * len * k;
    double* dvb = dv.data() + b * len * k;
    for (std::size_t t = 0; t < len; ++t) {
      const double* gt = gb + t * k;
      for (std::size_t s = 0; s < len; ++s) {
        const double wts = w[t * len + s];
        const double* vs = vb + s * k;
        double* dvs = dvb + s * k;
        double acc = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          acc += gt[c] * vs[c];
          dvs[c] += wts * gt[c];
        }
        dw[t * len + s] += acc;
      }
      double acc = 0.0;
      for (std::size_t c = 0; c < k; ++c) acc += gt[c];
      db[t] += acc;
    }
  }
  return {Tensor(v.shape(), std::move(dv)), Tensor(w.shape(), std::move(dw)),
          Tensor({len}, std::move(db))};
}

// ---------------------------------------------------------------------------
// Activations.

inline constexpr double kGeluC = 0.044715;
inline const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
// Subgradient 0 at exactly 0.
inline double relu_grad(double x) { return x > 0.0 ? 1.0 : 0.0; }

// tanh approximation of GeLU.
inline double gelu(double x) {
  const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad(double x) {
  const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
  const double th = std::tanh(u);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Overflow-safe binary cross-entropy on a logit.
inline double bce_with_logit(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
}

}  // namespace tgcnn::kernels
