#pragma once

#include <array>
#include <string>
#include <vector>

#include "sodm/init.hpp"
#include "sodm/slpa.hpp"

namespace sodm {

// Four-stage residual backbone at strides 4/8/16/32, basic two-conv blocks,
// optional SLPA gate after every stage output.
struct BackboneConfig {
  std::array<int, 4> widths{16, 32, 64, 128};
  int stem_width = 8;
  bool use_slpa = false;
  SlpaConfig slpa;

  void validate() const {
    if (stem_width <= 0) throw ConfigError("backbone: stem_width must be positive");
    for (int w : widths)
      if (w <= 0) throw ConfigError("backbone: stage widths must be positive");
    if (use_slpa) slpa.validate();
  }
};

template <class T>
void add_backbone_params(Params<T>& params, const std::string& prefix, const BackboneConfig& cfg,
                         SplitMix64& rng) {
  cfg.validate();
  ConvSpec stem = ConvSpec::same(3, cfg.stem_width, 3);
  stem.stride = 2;
  stem.padding = 1;
  add_conv_params(params, prefix + ".stem", stem, rng);
  add_bn_params<T>(params, prefix + ".stem_bn", cfg.stem_width);
  int in_c = cfg.stem_width;
  for (int s = 0; s < 4; ++s) {
    std::string sp = prefix + ".stage" + std::to_string(s);
    int out_c = cfg.widths[s];
    ConvSpec c1 = ConvSpec::same(in_c, out_c, 3);
    c1.stride = 2;
    add_conv_params(params, sp + ".conv1", c1, rng);
    add_bn_params<T>(params, sp + ".bn1", out_c);
    add_conv_params(params, sp + ".conv2", ConvSpec::same(out_c, out_c, 3), rng);
    add_bn_params<T>(params, sp + ".bn2", out_c);
    ConvSpec skip = ConvSpec::same(in_c, out_c, 1);
    skip.stride = 2;
    add_conv_params(params, sp + ".skip", skip, rng);
    add_bn_params<T>(params, sp + ".skip_bn", out_c);
    if (cfg.use_slpa) add_slpa_params(params, sp + ".slpa", cfg.slpa, rng);
    in_c = out_c;
  }
}

// Returns tape ids of (C2, C3, C4, C5).
template <class T>
std::array<int, 4> backbone_forward(Tape<T>& t, int image, const BackboneConfig& cfg,
                                    TapedParams<T>& tp, const std::string& prefix, bool train) {
  cfg.validate();
  {
    const Tensor4<T>& img = t.val(image);
    if (img.c != 3) throw ShapeError("backbone: expected a 3-channel image, got " + img.shape_str());
    if (img.h % 32 != 0 || img.w % 32 != 0)
      throw ShapeError("backbone: input " + img.shape_str() + " not divisible by 32");
  }
  ConvSpec stem = ConvSpec::same(3, cfg.stem_width, 3);
  stem.stride = 2;
  int x = taped_conv(t, tp, prefix + ".stem", image, stem);
  x = taped_bn(t, tp, prefix + ".stem_bn", x, train);
  x = ops::activation(t, x, ops::Activation::Relu);

  std::array<int, 4> outs{};
  int in_c = cfg.stem_width;
  for (int s = 0; s < 4; ++s) {
    std::string sp = prefix + ".stage" + std::to_string(s);
    int out_c = cfg.widths[s];
    ConvSpec c1 = ConvSpec::same(in_c, out_c, 3);
    c1.stride = 2;
    int y = taped_conv(t, tp, sp + ".conv1", x, c1);
    y = taped_bn(t, tp, sp + ".bn1", y, train);
    y = ops::activation(t, y, ops::Activation::Relu);
    y = taped_conv(t, tp, sp + ".conv2", y, ConvSpec::same(out_c, out_c, 3));
    y = taped_bn(t, tp, sp + ".bn2", y, train);
    ConvSpec skip = ConvSpec::same(in_c, out_c, 1);
    skip.stride = 2;
    int sk = taped_conv(t, tp, sp + ".skip", x, skip);
    sk = taped_bn(t, tp, sp + ".skip_bn", sk, train);
    x = ops::activation(t, ops::add(t, y, sk), ops::Activation::Relu);
    if (cfg.use_slpa) x = slpa_forward(t, x, cfg.slpa, tp, sp + ".slpa").rescaled;
    outs[s] = x;
    in_c = out_c;
  }
  return outs;
}

}  // namespace sodm
