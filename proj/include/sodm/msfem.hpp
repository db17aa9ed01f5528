#pragma once

#include <string>
#include <vector>

#include "sodm/init.hpp"
#include "sodm/nn.hpp"
#include "sodm/ops_basic.hpp"
#include "sodm/params.hpp"

namespace sodm {

// Pixel-adaptive dilated convolution: a 3x3 compression conv predicts a
// per-pixel k*k kernel (normalized by batch norm + softmax), which is applied
// to the dilated unfold of the input.
struct AdaptiveConvSpec {
  static constexpr int kernel = 3;
  int dilation = 1;
  int groups = 1;  // kernel-sharing groups across channels
  int in_channels = 0;

  void validate() const {
    if (dilation <= 0 || groups <= 0 || in_channels <= 0)
      throw ConfigError("adaptive conv: non-positive parameter");
    if (in_channels % groups != 0)
      throw ConfigError("adaptive conv: in_channels " + std::to_string(in_channels) +
                        " not divisible by groups " + std::to_string(groups));
  }
};

template <class T>
void add_adaptive_conv_params(Params<T>& params, const std::string& prefix,
                              const AdaptiveConvSpec& spec, SplitMix64& rng) {
  spec.validate();
  int kk = spec.kernel * spec.kernel;
  ConvSpec compress =
      ConvSpec::same(spec.in_channels, spec.groups * kk, spec.kernel, spec.dilation);
  add_conv_params(params, prefix + ".compress", compress, rng);
  add_bn_params<T>(params, prefix + ".bn", spec.groups * kk);
}

// Predicted kernels X2 with dims (n, groups, k*k, h*w); each pixel's k*k
// weights are nonnegative and sum to 1.
template <class T>
int adaptive_kernel_predict(Tape<T>& t, int x, const AdaptiveConvSpec& spec, TapedParams<T>& tp,
                            const std::string& prefix, bool train) {
  spec.validate();
  // copy dims up front: tape.val references go stale as nodes are pushed
  int n = t.val(x).n, c = t.val(x).c, h = t.val(x).h, w = t.val(x).w;
  if (c != spec.in_channels)
    throw ShapeError("adaptive_kernel_predict: input has " + std::to_string(c) +
                     " channels vs in_channels " + std::to_string(spec.in_channels));
  int kk = spec.kernel * spec.kernel;
  ConvSpec compress =
      ConvSpec::same(spec.in_channels, spec.groups * kk, spec.kernel, spec.dilation);
  int x1 = taped_conv(t, tp, prefix + ".compress", x, compress);
  int normed = taped_bn(t, tp, prefix + ".bn", x1, train);
  int soft = ops::softmax_channel(t, normed, spec.groups);
  return ops::reshape(t, soft, n, spec.groups, kk, h * w);
}

// Per-pixel contraction of Eq-style unfolded features (n, c, k*k, h*w) with
// predicted kernels (n, g, k*k, h*w), reshaped back to (n, c, h, w).
template <class T>
int adaptive_contract(Tape<T>& t, int x3, int x2, int out_h, int out_w) {
  Tensor4<T> uv = t.val(x3);
  Tensor4<T> kv = t.val(x2);
  if (kv.n != uv.n || kv.c < 1 || uv.c % kv.c != 0 || kv.h != uv.h || kv.w != uv.w)
    throw ShapeError("adaptive_contract: kernels " + kv.shape_str() + " vs unfold " + uv.shape_str());
  if (uv.w != out_h * out_w) throw ShapeError("adaptive_contract: pixel count mismatch");
  int n = uv.n, c = uv.c, kk = uv.h, hw = uv.w, g = kv.c;
  int cg = c / g;
  Tensor4<T> out(n, c, out_h, out_w);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      int gr = ch / cg;
      for (int pos = 0; pos < hw; ++pos) {
        T acc = T(0);
        for (int q = 0; q < kk; ++q) acc += kv.at(b, gr, q, pos) * uv.at(b, ch, q, pos);
        out.data[(static_cast<size_t>(b) * c + ch) * hw + pos] = acc;
      }
    }
  ensure_finite(out, "adaptive_contract");
  return t.push(std::move(out), {x3, x2}, [uv, kv, n, c, kk, hw, g, cg](const Tensor4<T>& gout) {
    Tensor4<T> gu(n, c, kk, hw);
    Tensor4<T> gk(n, g, kk, hw);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch) {
        int gr = ch / cg;
        for (int pos = 0; pos < hw; ++pos) {
          T go = gout.data[(static_cast<size_t>(b) * c + ch) * hw + pos];
          for (int q = 0; q < kk; ++q) {
            gu.at(b, ch, q, pos) = kv.at(b, gr, q, pos) * go;
            gk.at(b, gr, q, pos) += uv.at(b, ch, q, pos) * go;
          }
        }
      }
    return std::vector<Tensor4<T>>{std::move(gu), std::move(gk)};
  });
}

template <class T>
int adaptive_conv_apply(Tape<T>& t, int x, int x2, const AdaptiveConvSpec& spec) {
  spec.validate();
  int h = t.val(x).h, w = t.val(x).w;
  int x3 = ops::unfold_dilated(t, x, spec.kernel, spec.dilation);
  return adaptive_contract(t, x3, x2, h, w);
}

// Multi-scale feature enhancement: four channel slabs through adaptive
// dilated convolutions at increasing rates, a global-pool branch, the raw
// input, all concatenated and fused by a 1x1 conv.
struct MsfemConfig {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<int> dilation_rates{1, 2, 3, 4};
  int groups = 1;

  void validate() const {
    if (in_channels <= 0 || in_channels % 4 != 0)
      throw ConfigError("MSFEM in_channels must be positive and divisible by 4, got " +
                        std::to_string(in_channels));
    if (out_channels <= 0) throw ConfigError("MSFEM out_channels must be positive");
    if (dilation_rates.size() != 4)
      throw ConfigError("MSFEM requires exactly 4 dilation rates, got " +
                        std::to_string(dilation_rates.size()));
    for (int r : dilation_rates)
      if (r <= 0) throw ConfigError("MSFEM dilation rates must be positive");
  }

  AdaptiveConvSpec branch_spec(int i) const {
    AdaptiveConvSpec s;
    s.dilation = dilation_rates[i];
    s.groups = groups;
    s.in_channels = in_channels / 4;
    return s;
  }
};

template <class T>
void add_msfem_params(Params<T>& params, const std::string& prefix, const MsfemConfig& cfg,
                      SplitMix64& rng) {
  cfg.validate();
  for (int i = 0; i < 4; ++i)
    add_adaptive_conv_params(params, prefix + ".branch" + std::to_string(i), cfg.branch_spec(i), rng);
  add_conv_params(params, prefix + ".fuse",
                  ConvSpec::same(3 * cfg.in_channels, cfg.out_channels, 1), rng);
}

template <class T>
int msfem_forward(Tape<T>& t, int y, const MsfemConfig& cfg, TapedParams<T>& tp,
                  const std::string& prefix, bool train) {
  cfg.validate();
  int in_c = t.val(y).c, in_h = t.val(y).h, in_w = t.val(y).w;
  if (in_c != cfg.in_channels)
    throw ConfigError("msfem_forward: input has " + std::to_string(in_c) +
                      " channels, config expects " + std::to_string(cfg.in_channels));
  int slab = cfg.in_channels / 4;
  std::vector<int> parts{y};
  for (int i = 0; i < 4; ++i) {
    AdaptiveConvSpec spec = cfg.branch_spec(i);
    int xi = ops::slice_channels(t, y, i * slab, slab);
    int x2 = adaptive_kernel_predict(t, xi, spec, tp, prefix + ".branch" + std::to_string(i), train);
    int conv = adaptive_conv_apply(t, xi, x2, spec);
    parts.push_back(ops::activation(t, conv, ops::Activation::LeakyRelu));
  }
  int pooled = ops::adaptive_avg_pool(t, y);
  parts.push_back(ops::upsample(t, pooled, in_h, in_w, ops::UpsampleMode::Nearest));
  int cat = ops::concat_channels(t, parts);
  return taped_conv(t, tp, prefix + ".fuse", cat,
                    ConvSpec::same(3 * cfg.in_channels, cfg.out_channels, 1));
}

}  // namespace sodm
