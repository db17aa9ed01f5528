#pragma once

#include <array>
#include <string>

#include "sodm/deform.hpp"
#include "sodm/init.hpp"
#include "sodm/msfem.hpp"

namespace sodm {

// Feature pyramid over backbone outputs C2..C5. Lateral 1x1 convs project
// every level to a common width; the top level may instead pass through the
// multi-scale enhancement module, and top-down fusion may use the deformable
// alignment block instead of plain upsample-and-add. A 3x3 smoothing conv
// finishes each level.
struct PyramidConfig {
  std::array<int, 4> in_channels{16, 32, 64, 128};
  int width = 32;
  bool use_msfem = false;
  bool use_align = false;
  MsfemConfig msfem;  // in/out channels are filled in from this config

  void validate() const {
    if (width <= 0) throw ConfigError("pyramid: width must be positive");
    for (int c : in_channels)
      if (c <= 0) throw ConfigError("pyramid: in_channels must be positive");
    if (use_msfem) {
      MsfemConfig m = msfem;
      m.in_channels = in_channels[3];
      m.out_channels = width;
      m.validate();
    }
  }
};

template <class T>
void add_pyramid_params(Params<T>& params, const std::string& prefix, const PyramidConfig& cfg,
                        SplitMix64& rng) {
  cfg.validate();
  for (int i = 0; i < 4; ++i) {
    std::string lp = prefix + ".lateral" + std::to_string(i);
    if (i == 3 && cfg.use_msfem) {
      MsfemConfig m = cfg.msfem;
      m.in_channels = cfg.in_channels[3];
      m.out_channels = cfg.width;
      add_msfem_params(params, prefix + ".msfem", m, rng);
    } else {
      add_conv_params(params, lp, ConvSpec::same(cfg.in_channels[i], cfg.width, 1), rng);
    }
    add_conv_params(params, prefix + ".smooth" + std::to_string(i),
                    ConvSpec::same(cfg.width, cfg.width, 3), rng);
  }
  if (cfg.use_align)
    for (int i = 0; i < 3; ++i)
      add_align_params(params, prefix + ".align" + std::to_string(i), cfg.width, rng);
}

// Returns tape ids of (P2, P3, P4, P5), all with cfg.width channels and the
// spatial dims of the corresponding C level.
template <class T>
std::array<int, 4> build_pyramid(Tape<T>& t, const std::array<int, 4>& feats,
                                 const PyramidConfig& cfg, TapedParams<T>& tp,
                                 const std::string& prefix, bool train) {
  cfg.validate();
  std::array<int, 4> lat{};
  std::array<int, 4> dims_h{}, dims_w{};
  for (int i = 0; i < 4; ++i) {
    const Tensor4<T>& f = t.val(feats[i]);
    if (f.c != cfg.in_channels[i])
      throw ShapeError("build_pyramid: level " + std::to_string(i) + " has " + f.shape_str() +
                       " but config expects " + std::to_string(cfg.in_channels[i]) + " channels");
    dims_h[i] = f.h;
    dims_w[i] = f.w;
  }
  for (int i = 0; i < 3; ++i)
    if (dims_h[i + 1] != dims_h[i] / 2 || dims_w[i + 1] != dims_w[i] / 2)
      throw ShapeError("build_pyramid: level " + std::to_string(i + 1) + " is " +
                       std::to_string(dims_h[i + 1]) + "x" + std::to_string(dims_w[i + 1]) +
                       ", expected half of " + std::to_string(dims_h[i]) + "x" +
                       std::to_string(dims_w[i]));
  for (int i = 0; i < 4; ++i) {
    if (i == 3 && cfg.use_msfem) {
      MsfemConfig m = cfg.msfem;
      m.in_channels = cfg.in_channels[3];
      m.out_channels = cfg.width;
      lat[i] = msfem_forward(t, feats[i], m, tp, prefix + ".msfem", train);
    } else {
      lat[i] = taped_conv(t, tp, prefix + ".lateral" + std::to_string(i), feats[i],
                          ConvSpec::same(cfg.in_channels[i], cfg.width, 1));
    }
  }
  std::array<int, 4> merged{};
  merged[3] = lat[3];
  for (int i = 2; i >= 0; --i) {
    if (cfg.use_align) {
      merged[i] = align_fuse(t, merged[i + 1], lat[i], tp, prefix + ".align" + std::to_string(i));
    } else {
      int up = ops::upsample(t, merged[i + 1], dims_h[i], dims_w[i], ops::UpsampleMode::Nearest);
      merged[i] = ops::add(t, up, lat[i]);
    }
  }
  std::array<int, 4> out{};
  for (int i = 0; i < 4; ++i)
    out[i] = taped_conv(t, tp, prefix + ".smooth" + std::to_string(i), merged[i],
                        ConvSpec::same(cfg.width, cfg.width, 3));
  return out;
}

}  // namespace sodm
