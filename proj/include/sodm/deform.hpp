#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sodm/init.hpp"
#include "sodm/nn.hpp"
#include "sodm/ops_basic.hpp"
#include "sodm/params.hpp"

namespace sodm {
namespace ops {

// Deformable convolution (v1, no modulation). Offsets carry channel 2q = dy
// and 2q+1 = dx for kernel position q, in pixels, fractional allowed.
// Samples are read by bilinear interpolation with zero outside the image.
// Stride is 1 and padding r*(k-1)/2, so output dims equal input dims.

namespace detail {

template <class T>
inline T bilinear_read(const Tensor4<T>& x, int b, int ch, int y, int xx) {
  if (y < 0 || y >= x.h || xx < 0 || xx >= x.w) return T(0);
  return x.at(b, ch, y, xx);
}

}  // namespace detail

template <class T>
Tensor4<T> deform_conv2d_fwd(const Tensor4<T>& x, const Tensor4<T>& off, const Tensor4<T>& wgt,
                             const Tensor4<T>* bias, int k, int r) {
  int kk = k * k, half = (k - 1) / 2;
  if (off.n != x.n || off.c != 2 * kk || off.h != x.h || off.w != x.w)
    throw ShapeError("deform_conv2d: offsets " + off.shape_str() + " do not match output " +
                     std::to_string(x.n) + "x" + std::to_string(2 * kk) + "x" +
                     std::to_string(x.h) + "x" + std::to_string(x.w));
  if (wgt.c != x.c || wgt.h != k || wgt.w != k)
    throw ShapeError("deform_conv2d: weight " + wgt.shape_str() + " vs input " + x.shape_str());
  int oc = wgt.n;
  Tensor4<T> out(x.n, oc, x.h, x.w);
  std::vector<T> sampled(static_cast<size_t>(x.c) * kk);
  for (int b = 0; b < x.n; ++b)
    for (int y = 0; y < x.h; ++y)
      for (int xx = 0; xx < x.w; ++xx) {
        for (int q = 0; q < kk; ++q) {
          T sy = static_cast<T>(y + r * (q / k - half)) + off.at(b, 2 * q, y, xx);
          T sx = static_cast<T>(xx + r * (q % k - half)) + off.at(b, 2 * q + 1, y, xx);
          int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
          T fy = sy - y0, fx = sx - x0;
          for (int ch = 0; ch < x.c; ++ch) {
            T v00 = detail::bilinear_read(x, b, ch, y0, x0);
            T v01 = detail::bilinear_read(x, b, ch, y0, x0 + 1);
            T v10 = detail::bilinear_read(x, b, ch, y0 + 1, x0);
            T v11 = detail::bilinear_read(x, b, ch, y0 + 1, x0 + 1);
            sampled[static_cast<size_t>(ch) * kk + q] =
                (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) + fy * ((T(1) - fx) * v10 + fx * v11);
          }
        }
        for (int o = 0; o < oc; ++o) {
          T acc = bias ? bias->data[o] : T(0);
          for (int ch = 0; ch < x.c; ++ch)
            for (int q = 0; q < kk; ++q)
              acc += wgt.at(o, ch, q / k, q % k) * sampled[static_cast<size_t>(ch) * kk + q];
          out.at(b, o, y, xx) = acc;
        }
      }
  ensure_finite(out, "deform_conv2d");
  return out;
}

template <class T>
int deform_conv2d(Tape<T>& t, int x, int offsets, int w, int bias, int k, int r) {
  Tensor4<T> xv = t.val(x), ov = t.val(offsets), wv = t.val(w);
  const Tensor4<T>* bp = bias >= 0 ? &t.val(bias) : nullptr;
  Tensor4<T> out = deform_conv2d_fwd(xv, ov, wv, bp, k, r);
  bool has_bias = bias >= 0;
  std::vector<int> inputs{x, offsets, w};
  if (has_bias) inputs.push_back(bias);
  return t.push(std::move(out), inputs, [xv, ov, wv, k, r, has_bias](const Tensor4<T>& g) {
    int kk = k * k, half = (k - 1) / 2;
    int oc = wv.n;
    Tensor4<T> gx = Tensor4<T>::zeros_like(xv);
    Tensor4<T> goff = Tensor4<T>::zeros_like(ov);
    Tensor4<T> gw = Tensor4<T>::zeros_like(wv);
    Tensor4<T> gb(1, oc, 1, 1);
    for (int b = 0; b < xv.n; ++b)
      for (int y = 0; y < xv.h; ++y)
        for (int xx = 0; xx < xv.w; ++xx) {
          for (int o = 0; o < oc; ++o) gb.data[o] += g.at(b, o, y, xx);
          for (int q = 0; q < kk; ++q) {
            T sy = static_cast<T>(y + r * (q / k - half)) + ov.at(b, 2 * q, y, xx);
            T sx = static_cast<T>(xx + r * (q % k - half)) + ov.at(b, 2 * q + 1, y, xx);
            int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
            T fy = sy - y0, fx = sx - x0;
            T gsy = T(0), gsx = T(0);
            for (int ch = 0; ch < xv.c; ++ch) {
              T v00 = detail::bilinear_read(xv, b, ch, y0, x0);
              T v01 = detail::bilinear_read(xv, b, ch, y0, x0 + 1);
              T v10 = detail::bilinear_read(xv, b, ch, y0 + 1, x0);
              T v11 = detail::bilinear_read(xv, b, ch, y0 + 1, x0 + 1);
              T sample = (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
                         fy * ((T(1) - fx) * v10 + fx * v11);
              // sum over output channels of w * upstream gradient
              T s = T(0);
              for (int o = 0; o < oc; ++o) {
                T go = g.at(b, o, y, xx);
                s += wv.at(o, ch, q / k, q % k) * go;
                gw.at(o, ch, q / k, q % k) += sample * go;
              }
              if (y0 >= 0 && y0 < xv.h) {
                if (x0 >= 0 && x0 < xv.w) gx.at(b, ch, y0, x0) += s * (T(1) - fy) * (T(1) - fx);
                if (x0 + 1 >= 0 && x0 + 1 < xv.w) gx.at(b, ch, y0, x0 + 1) += s * (T(1) - fy) * fx;
              }
              if (y0 + 1 >= 0 && y0 + 1 < xv.h) {
                if (x0 >= 0 && x0 < xv.w) gx.at(b, ch, y0 + 1, x0) += s * fy * (T(1) - fx);
                if (x0 + 1 >= 0 && x0 + 1 < xv.w) gx.at(b, ch, y0 + 1, x0 + 1) += s * fy * fx;
              }
              gsy += s * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
              gsx += s * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
            }
            goff.at(b, 2 * q, y, xx) += gsy;
            goff.at(b, 2 * q + 1, y, xx) += gsx;
          }
        }
    std::vector<Tensor4<T>> grads{std::move(gx), std::move(goff), std::move(gw)};
    if (has_bias) grads.push_back(std::move(gb));
    return grads;
  });
}

}  // namespace ops

// ---- top-down feature alignment ----

inline constexpr int kAlignKernel = 3;

// Offset predictor: one 3x3 conv over concat(upsampled top, lateral),
// zero-initialized so the initial offsets vanish and align_fuse reduces to
// plain FPN addition.
template <class T>
void add_align_params(Params<T>& params, const std::string& prefix, int channels, SplitMix64& rng) {
  int kk = kAlignKernel * kAlignKernel;
  add_conv_params(params, prefix + ".offset", ConvSpec::same(2 * channels, 2 * kk, 3), rng,
                  /*zero_init=*/true);
  // deform weights start as the identity (delta) kernel
  Tensor4<T> w(channels, channels, kAlignKernel, kAlignKernel);
  for (int ch = 0; ch < channels; ++ch) w.at(ch, ch, 1, 1) = T(1);
  params.add(prefix + ".deform.w", std::move(w));
  params.add(prefix + ".deform.b", Tensor4<T>(1, channels, 1, 1));
  (void)rng;
}

template <class T>
int predict_offsets(Tape<T>& t, int upsampled_top, int lateral, TapedParams<T>& tp,
                    const std::string& prefix) {
  if (!t.val(upsampled_top).same_dims(t.val(lateral)))
    throw ShapeError("predict_offsets: operands " + t.val(upsampled_top).shape_str() + " vs " +
                     t.val(lateral).shape_str());
  int c = t.val(upsampled_top).c;
  int cat = ops::concat_channels(t, {upsampled_top, lateral});
  int kk = kAlignKernel * kAlignKernel;
  return taped_conv(t, tp, prefix + ".offset", cat, ConvSpec::same(2 * c, 2 * kk, 3));
}

template <class T>
int align_fuse(Tape<T>& t, int top, int lateral, TapedParams<T>& tp, const std::string& prefix) {
  if (t.val(top).c != t.val(lateral).c)
    throw ShapeError("align_fuse: channel mismatch " + t.val(top).shape_str() + " vs " +
                     t.val(lateral).shape_str());
  int lh = t.val(lateral).h, lw = t.val(lateral).w;
  int up = ops::upsample(t, top, lh, lw, ops::UpsampleMode::Nearest);
  int off = predict_offsets(t, up, lateral, tp, prefix);
  int aligned = ops::deform_conv2d(t, up, off, tp.id(prefix + ".deform.w"),
                                   tp.id(prefix + ".deform.b"), kAlignKernel, 1);
  return ops::add(t, aligned, lateral);
}

}  // namespace sodm
