#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "sodm/ops_basic.hpp"
#include "sodm/tape.hpp"
#include "sodm/tensor.hpp"

namespace sodm {

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
  bool bias = true;

  static ConvSpec same(int in_c, int out_c, int k, int dilation = 1, int groups = 1) {
    ConvSpec s;
    s.in_channels = in_c;
    s.out_channels = out_c;
    s.kernel = k;
    s.dilation = dilation;
    s.padding = dilation * (k - 1) / 2;
    s.groups = groups;
    return s;
  }

  int out_size(int in) const {
    return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
  }

  void validate(const char* where) const {
    if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || dilation <= 0 ||
        groups <= 0 || padding < 0)
      throw ShapeError(std::string(where) + ": non-positive conv parameter");
    if (in_channels % groups != 0 || out_channels % groups != 0)
      throw ShapeError(std::string(where) + ": channels not divisible by groups");
  }
};

namespace ops {

// ---- conv2d ----

template <class T>
Tensor4<T> conv2d_fwd(const Tensor4<T>& x, const Tensor4<T>& wgt, const Tensor4<T>* bias,
                      const ConvSpec& s) {
  s.validate("conv2d");
  if (x.c != s.in_channels)
    throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, spec expects " +
                     std::to_string(s.in_channels));
  int icg = s.in_channels / s.groups;
  if (wgt.n != s.out_channels || wgt.c != icg || wgt.h != s.kernel || wgt.w != s.kernel)
    throw ShapeError("conv2d: weight " + wgt.shape_str() + " does not match spec");
  int oh = s.out_size(x.h), ow = s.out_size(x.w);
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: non-positive output size for input " + x.shape_str());

  int ocg = s.out_channels / s.groups;
  Tensor4<T> out(x.n, s.out_channels, oh, ow);
  for (int b = 0; b < x.n; ++b)
    for (int oc = 0; oc < s.out_channels; ++oc) {
      int g = oc / ocg;
      int ic0 = g * icg;
      T bv = bias ? bias->data[oc] : T(0);
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          T acc = T(0);
          for (int ic = 0; ic < icg; ++ic)
            for (int ky = 0; ky < s.kernel; ++ky) {
              int iy = y * s.stride - s.padding + ky * s.dilation;
              if (iy < 0 || iy >= x.h) continue;
              for (int kx = 0; kx < s.kernel; ++kx) {
                int ix = xx * s.stride - s.padding + kx * s.dilation;
                if (ix < 0 || ix >= x.w) continue;
                acc += wgt.at(oc, ic, ky, kx) * x.at(b, ic0 + ic, iy, ix);
              }
            }
          out.at(b, oc, y, xx) = acc + bv;
        }
    }
  ensure_finite(out, "conv2d");
  return out;
}

template <class T>
void conv2d_bwd(const Tensor4<T>& x, const Tensor4<T>& wgt, const ConvSpec& s,
                const Tensor4<T>& gout, Tensor4<T>& gx, Tensor4<T>& gw, Tensor4<T>* gb) {
  int icg = s.in_channels / s.groups;
  int ocg = s.out_channels / s.groups;
  gx = Tensor4<T>::zeros_like(x);
  gw = Tensor4<T>::zeros_like(wgt);
  for (int b = 0; b < x.n; ++b)
    for (int oc = 0; oc < s.out_channels; ++oc) {
      int g = oc / ocg;
      int ic0 = g * icg;
      for (int y = 0; y < gout.h; ++y)
        for (int xx = 0; xx < gout.w; ++xx) {
          T go = gout.at(b, oc, y, xx);
          if (gb) gb->data[oc] += go;
          for (int ic = 0; ic < icg; ++ic)
            for (int ky = 0; ky < s.kernel; ++ky) {
              int iy = y * s.stride - s.padding + ky * s.dilation;
              if (iy < 0 || iy >= x.h) continue;
              for (int kx = 0; kx < s.kernel; ++kx) {
                int ix = xx * s.stride - s.padding + kx * s.dilation;
                if (ix < 0 || ix >= x.w) continue;
                gx.at(b, ic0 + ic, iy, ix) += wgt.at(oc, ic, ky, kx) * go;
                gw.at(oc, ic, ky, kx) += x.at(b, ic0 + ic, iy, ix) * go;
              }
            }
        }
    }
}

template <class T>
int conv2d(Tape<T>& t, int x, int w, int bias, const ConvSpec& s) {
  Tensor4<T> xv = t.val(x), wv = t.val(w);
  const Tensor4<T>* bp = bias >= 0 ? &t.val(bias) : nullptr;
  Tensor4<T> out = conv2d_fwd(xv, wv, bp, s);
  std::vector<int> inputs = bias >= 0 ? std::vector<int>{x, w, bias} : std::vector<int>{x, w};
  bool has_bias = bias >= 0;
  int oc = s.out_channels;
  return t.push(std::move(out), inputs, [xv, wv, s, has_bias, oc](const Tensor4<T>& g) {
    Tensor4<T> gx, gw;
    Tensor4<T> gb(1, oc, 1, 1);
    conv2d_bwd(xv, wv, s, g, gx, gw, has_bias ? &gb : nullptr);
    std::vector<Tensor4<T>> grads{std::move(gx), std::move(gw)};
    if (has_bias) grads.push_back(std::move(gb));
    return grads;
  });
}

// ---- channel pooling ----

enum class PoolMode { Max, Avg };

template <class T>
int pool_channel(Tape<T>& t, int x, PoolMode mode) {
  const Tensor4<T>& xv = t.val(x);
  if (xv.c < 1) throw ShapeError("pool_channel: empty tensor");
  Tensor4<T> out(xv.n, 1, xv.h, xv.w);
  std::vector<int> argmax;
  if (mode == PoolMode::Max) argmax.resize(static_cast<size_t>(xv.n) * xv.h * xv.w);
  for (int b = 0; b < xv.n; ++b)
    for (int y = 0; y < xv.h; ++y)
      for (int xx = 0; xx < xv.w; ++xx) {
        if (mode == PoolMode::Max) {
          int best = 0;
          T bv = xv.at(b, 0, y, xx);
          for (int ch = 1; ch < xv.c; ++ch) {
            T v = xv.at(b, ch, y, xx);
            if (v > bv) { bv = v; best = ch; }
          }
          out.at(b, 0, y, xx) = bv;
          argmax[(static_cast<size_t>(b) * xv.h + y) * xv.w + xx] = best;
        } else {
          T acc = T(0);
          for (int ch = 0; ch < xv.c; ++ch) acc += xv.at(b, ch, y, xx);
          out.at(b, 0, y, xx) = acc / static_cast<T>(xv.c);
        }
      }
  ensure_finite(out, "pool_channel");
  int n = xv.n, c = xv.c, h = xv.h, w = xv.w;
  return t.push(std::move(out), {x}, [mode, argmax, n, c, h, w](const Tensor4<T>& g) {
    Tensor4<T> gx(n, c, h, w);
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          T go = g.at(b, 0, y, xx);
          if (mode == PoolMode::Max) {
            gx.at(b, argmax[(static_cast<size_t>(b) * h + y) * w + xx], y, xx) = go;
          } else {
            for (int ch = 0; ch < c; ++ch) gx.at(b, ch, y, xx) = go / static_cast<T>(c);
          }
        }
    return std::vector<Tensor4<T>>{std::move(gx)};
  });
}

// ---- adaptive average pooling to 1x1 ----

template <class T>
int adaptive_avg_pool(Tape<T>& t, int x) {
  const Tensor4<T>& xv = t.val(x);
  if (xv.h < 1 || xv.w < 1) throw ShapeError("adaptive_avg_pool: empty spatial dims");
  Tensor4<T> out(xv.n, xv.c, 1, 1);
  T inv = T(1) / static_cast<T>(xv.h * xv.w);
  for (int b = 0; b < xv.n; ++b)
    for (int ch = 0; ch < xv.c; ++ch) {
      T acc = T(0);
      for (int y = 0; y < xv.h; ++y)
        for (int xx = 0; xx < xv.w; ++xx) acc += xv.at(b, ch, y, xx);
      out.at(b, ch, 0, 0) = acc * inv;
    }
  ensure_finite(out, "adaptive_avg_pool");
  int n = xv.n, c = xv.c, h = xv.h, w = xv.w;
  return t.push(std::move(out), {x}, [n, c, h, w, inv](const Tensor4<T>& g) {
    Tensor4<T> gx(n, c, h, w);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch) {
        T go = g.at(b, ch, 0, 0) * inv;
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) gx.at(b, ch, y, xx) = go;
      }
    return std::vector<Tensor4<T>>{std::move(gx)};
  });
}

// ---- upsampling ----

enum class UpsampleMode { Nearest, Bilinear };

template <class T>
int upsample(Tape<T>& t, int x, int out_h, int out_w, UpsampleMode mode) {
  const Tensor4<T>& xv = t.val(x);
  if (out_h <= 0 || out_w <= 0) throw ShapeError("upsample: zero target size");
  int n = xv.n, c = xv.c, h = xv.h, w = xv.w;
  Tensor4<T> out(n, c, out_h, out_w);
  double sy = static_cast<double>(h) / out_h;
  double sx = static_cast<double>(w) / out_w;

  // (lo index, hi index, hi weight) per output coordinate; nearest uses lo only
  struct Map { int lo, hi; T frac; };
  std::vector<Map> ymap(out_h), xmap(out_w);
  auto fill_map = [mode](std::vector<Map>& m, int out_n, int in_n, double scale) {
    for (int d = 0; d < out_n; ++d) {
      if (mode == UpsampleMode::Nearest) {
        int src = std::min(in_n - 1, static_cast<int>(d * scale));
        m[d] = {src, src, T(0)};
      } else {
        double s = (d + 0.5) * scale - 0.5;
        if (s < 0) s = 0;
        int lo = std::min(in_n - 1, static_cast<int>(s));
        int hi = std::min(in_n - 1, lo + 1);
        m[d] = {lo, hi, static_cast<T>(s - lo)};
      }
    }
  };
  fill_map(ymap, out_h, h, sy);
  fill_map(xmap, out_w, w, sx);

  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx) {
          const Map& my = ymap[y];
          const Map& mx = xmap[xx];
          if (mode == UpsampleMode::Nearest) {
            out.at(b, ch, y, xx) = xv.at(b, ch, my.lo, mx.lo);
          } else {
            T v00 = xv.at(b, ch, my.lo, mx.lo), v01 = xv.at(b, ch, my.lo, mx.hi);
            T v10 = xv.at(b, ch, my.hi, mx.lo), v11 = xv.at(b, ch, my.hi, mx.hi);
            T top = v00 + (v01 - v00) * mx.frac;
            T bot = v10 + (v11 - v10) * mx.frac;
            out.at(b, ch, y, xx) = top + (bot - top) * my.frac;
          }
        }
  ensure_finite(out, "upsample");
  return t.push(std::move(out), {x}, [n, c, h, w, out_h, out_w, ymap, xmap, mode](const Tensor4<T>& g) {
    Tensor4<T> gx(n, c, h, w);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < out_h; ++y)
          for (int xx = 0; xx < out_w; ++xx) {
            const auto& my = ymap[y];
            const auto& mx = xmap[xx];
            T go = g.at(b, ch, y, xx);
            if (mode == UpsampleMode::Nearest) {
              gx.at(b, ch, my.lo, mx.lo) += go;
            } else {
              T wy1 = my.frac, wy0 = T(1) - wy1;
              T wx1 = mx.frac, wx0 = T(1) - wx1;
              gx.at(b, ch, my.lo, mx.lo) += go * wy0 * wx0;
              gx.at(b, ch, my.lo, mx.hi) += go * wy0 * wx1;
              gx.at(b, ch, my.hi, mx.lo) += go * wy1 * wx0;
              gx.at(b, ch, my.hi, mx.hi) += go * wy1 * wx1;
            }
          }
    return std::vector<Tensor4<T>>{std::move(gx)};
  });
}

// ---- dilated unfold (im2col with an explicit kernel-position axis) ----
// Output dims (n, c, k*k, h*w); entry (b,ch,q,y*w+x) reads the input at the
// dilated offset for kernel position q, zero outside the image. Requires odd
// k so same-padding preserves spatial size.

template <class T>
Tensor4<T> unfold_dilated_fwd(const Tensor4<T>& x, int k, int r) {
  if (k % 2 == 0) throw ShapeError("unfold_dilated: even kernel size unsupported");
  if (k <= 0 || r <= 0) throw ShapeError("unfold_dilated: non-positive kernel/dilation");
  int half = (k - 1) / 2;
  Tensor4<T> out(x.n, x.c, k * k, x.h * x.w);
  for (int b = 0; b < x.n; ++b)
    for (int ch = 0; ch < x.c; ++ch)
      for (int q = 0; q < k * k; ++q) {
        int dy = r * (q / k - half), dx = r * (q % k - half);
        for (int y = 0; y < x.h; ++y) {
          int iy = y + dy;
          for (int xx = 0; xx < x.w; ++xx) {
            int ix = xx + dx;
            T v = (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w) ? x.at(b, ch, iy, ix) : T(0);
            out.at(b, ch, q, y * x.w + xx) = v;
          }
        }
      }
  return out;
}

template <class T>
int unfold_dilated(Tape<T>& t, int x, int k, int r) {
  const Tensor4<T>& xv = t.val(x);
  Tensor4<T> out = unfold_dilated_fwd(xv, k, r);
  int n = xv.n, c = xv.c, h = xv.h, w = xv.w;
  return t.push(std::move(out), {x}, [n, c, h, w, k, r](const Tensor4<T>& g) {
    int half = (k - 1) / 2;
    Tensor4<T> gx(n, c, h, w);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int q = 0; q < k * k; ++q) {
          int dy = r * (q / k - half), dx = r * (q % k - half);
          for (int y = 0; y < h; ++y) {
            int iy = y + dy;
            if (iy < 0 || iy >= h) continue;
            for (int xx = 0; xx < w; ++xx) {
              int ix = xx + dx;
              if (ix < 0 || ix >= w) continue;
              gx.at(b, ch, iy, ix) += g.at(b, ch, q, y * w + xx);
            }
          }
        }
    return std::vector<Tensor4<T>>{std::move(gx)};
  });
}

// ---- batch normalization ----
// Per-channel statistics over (n, h, w). Train mode normalizes with batch
// statistics and updates the caller-owned running stats in place
// (momentum 0.1, unbiased variance for the running estimate).

template <class T>
int batch_norm(Tape<T>& t, int x, int gamma, int beta, Tensor4<T>& run_mean, Tensor4<T>& run_var,
               bool train, T eps = T(1e-5), T momentum = T(0.1)) {
  const Tensor4<T>& xv = t.val(x);
  const Tensor4<T>& gv = t.val(gamma);
  const Tensor4<T>& bv = t.val(beta);
  int C = xv.c;
  if (gv.c != C || bv.c != C || run_mean.c != C || run_var.c != C)
    throw ShapeError("batch_norm: parameter channel mismatch for input " + xv.shape_str());
  int M = xv.n * xv.h * xv.w;
  if (train && M < 1) throw ShapeError("batch_norm: empty batch in train mode");

  std::vector<T> mean(C), var(C);
  if (train) {
    for (int ch = 0; ch < C; ++ch) {
      T s = T(0);
      for (int b = 0; b < xv.n; ++b)
        for (int y = 0; y < xv.h; ++y)
          for (int xx = 0; xx < xv.w; ++xx) s += xv.at(b, ch, y, xx);
      mean[ch] = s / static_cast<T>(M);
      T v = T(0);
      for (int b = 0; b < xv.n; ++b)
        for (int y = 0; y < xv.h; ++y)
          for (int xx = 0; xx < xv.w; ++xx) {
            T d = xv.at(b, ch, y, xx) - mean[ch];
            v += d * d;
          }
      var[ch] = v / static_cast<T>(M);
      T unbiased = M > 1 ? v / static_cast<T>(M - 1) : var[ch];
      run_mean.data[ch] = (T(1) - momentum) * run_mean.data[ch] + momentum * mean[ch];
      run_var.data[ch] = (T(1) - momentum) * run_var.data[ch] + momentum * unbiased;
    }
  } else {
    for (int ch = 0; ch < C; ++ch) {
      mean[ch] = run_mean.data[ch];
      var[ch] = run_var.data[ch];
    }
  }

  Tensor4<T> xhat = Tensor4<T>::zeros_like(xv);
  Tensor4<T> out = Tensor4<T>::zeros_like(xv);
  std::vector<T> inv_sigma(C);
  for (int ch = 0; ch < C; ++ch) inv_sigma[ch] = T(1) / std::sqrt(var[ch] + eps);
  for (int b = 0; b < xv.n; ++b)
    for (int ch = 0; ch < C; ++ch)
      for (int y = 0; y < xv.h; ++y)
        for (int xx = 0; xx < xv.w; ++xx) {
          T xh = (xv.at(b, ch, y, xx) - mean[ch]) * inv_sigma[ch];
          xhat.at(b, ch, y, xx) = xh;
          out.at(b, ch, y, xx) = gv.data[ch] * xh + bv.data[ch];
        }
  ensure_finite(out, "batch_norm");

  Tensor4<T> gamma_v = gv;
  return t.push(std::move(out), {x, gamma, beta},
                [xhat, gamma_v, inv_sigma, train, M, C](const Tensor4<T>& g) {
    Tensor4<T> ggamma(1, C, 1, 1), gbeta(1, C, 1, 1);
    Tensor4<T> gx = Tensor4<T>::zeros_like(g);
    std::vector<T> sum_g(C, T(0)), sum_gx(C, T(0));
    for (int b = 0; b < g.n; ++b)
      for (int ch = 0; ch < C; ++ch)
        for (int y = 0; y < g.h; ++y)
          for (int xx = 0; xx < g.w; ++xx) {
            T go = g.at(b, ch, y, xx);
            sum_g[ch] += go;
            sum_gx[ch] += go * xhat.at(b, ch, y, xx);
          }
    for (int ch = 0; ch < C; ++ch) {
      ggamma.data[ch] = sum_gx[ch];
      gbeta.data[ch] = sum_g[ch];
    }
    T invM = M > 0 ? T(1) / static_cast<T>(M) : T(0);
    for (int b = 0; b < g.n; ++b)
      for (int ch = 0; ch < C; ++ch)
        for (int y = 0; y < g.h; ++y)
          for (int xx = 0; xx < g.w; ++xx) {
            T go = g.at(b, ch, y, xx);
            T d = train ? go - sum_g[ch] * invM - xhat.at(b, ch, y, xx) * sum_gx[ch] * invM : go;
            gx.at(b, ch, y, xx) = gamma_v.data[ch] * inv_sigma[ch] * d;
          }
    return std::vector<Tensor4<T>>{std::move(gx), std::move(ggamma), std::move(gbeta)};
  });
}

// ---- activations ----

enum class Activation { Relu, LeakyRelu, Sigmoid };

template <class T>
int activation(Tape<T>& t, int x, Activation kind, T alpha = T(0.01)) {
  const Tensor4<T>& xv = t.val(x);
  Tensor4<T> out = Tensor4<T>::zeros_like(xv);
  for (size_t i = 0; i < xv.data.size(); ++i) {
    T v = xv.data[i];
    switch (kind) {
      case Activation::Relu: out.data[i] = v > T(0) ? v : T(0); break;
      case Activation::LeakyRelu: out.data[i] = v > T(0) ? v : alpha * v; break;
      case Activation::Sigmoid: out.data[i] = T(1) / (T(1) + std::exp(-v)); break;
    }
  }
  ensure_finite(out, "activation");
  Tensor4<T> saved = kind == Activation::Sigmoid ? out : xv;
  return t.push(std::move(out), {x}, [kind, alpha, saved](const Tensor4<T>& g) {
    Tensor4<T> gx = g;
    for (size_t i = 0; i < gx.data.size(); ++i) {
      T s = saved.data[i];
      switch (kind) {
        case Activation::Relu: gx.data[i] = s > T(0) ? g.data[i] : T(0); break;
        case Activation::LeakyRelu: gx.data[i] = s > T(0) ? g.data[i] : alpha * g.data[i]; break;
        case Activation::Sigmoid: gx.data[i] = g.data[i] * s * (T(1) - s); break;
      }
    }
    return std::vector<Tensor4<T>>{std::move(gx)};
  });
}

// ---- channel softmax ----
// Softmax over the channel axis, computed with max-subtraction. With
// num_groups > 1 the channels split into contiguous slabs and each slab is
// normalized independently.

template <class T>
int softmax_channel(Tape<T>& t, int x, int num_groups = 1) {
  const Tensor4<T>& xv = t.val(x);
  if (num_groups < 1 || xv.c % num_groups != 0)
    throw ShapeError("softmax_channel: " + std::to_string(xv.c) + " channels not divisible into " +
                     std::to_string(num_groups) + " groups");
  int gs = xv.c / num_groups;
  Tensor4<T> out = Tensor4<T>::zeros_like(xv);
  for (int b = 0; b < xv.n; ++b)
    for (int gr = 0; gr < num_groups; ++gr)
      for (int y = 0; y < xv.h; ++y)
        for (int xx = 0; xx < xv.w; ++xx) {
          int c0 = gr * gs;
          T mx = xv.at(b, c0, y, xx);
          for (int ch = 1; ch < gs; ++ch) mx = std::max(mx, xv.at(b, c0 + ch, y, xx));
          T denom = T(0);
          for (int ch = 0; ch < gs; ++ch) {
            T e = std::exp(xv.at(b, c0 + ch, y, xx) - mx);
            out.at(b, c0 + ch, y, xx) = e;
            denom += e;
          }
          for (int ch = 0; ch < gs; ++ch) out.at(b, c0 + ch, y, xx) /= denom;
        }
  ensure_finite(out, "softmax_channel");
  Tensor4<T> saved = out;
  return t.push(std::move(out), {x}, [saved, num_groups, gs](const Tensor4<T>& g) {
    Tensor4<T> gx = Tensor4<T>::zeros_like(g);
    for (int b = 0; b < g.n; ++b)
      for (int gr = 0; gr < num_groups; ++gr)
        for (int y = 0; y < g.h; ++y)
          for (int xx = 0; xx < g.w; ++xx) {
            int c0 = gr * gs;
            T dot = T(0);
            for (int ch = 0; ch < gs; ++ch)
              dot += g.at(b, c0 + ch, y, xx) * saved.at(b, c0 + ch, y, xx);
            for (int ch = 0; ch < gs; ++ch) {
              T s = saved.at(b, c0 + ch, y, xx);
              gx.at(b, c0 + ch, y, xx) = s * (g.at(b, c0 + ch, y, xx) - dot);
            }
          }
    return std::vector<Tensor4<T>>{std::move(gx)};
  });
}

}  // namespace ops
}  // namespace sodm
