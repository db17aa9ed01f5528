#pragma once

#include <string>

#include "sodm/backbone.hpp"
#include "sodm/detector.hpp"
#include "sodm/fpn.hpp"

namespace sodm {

// Full detector: backbone (optional SLPA) -> pyramid (optional MSFEM /
// deformable alignment) -> shared dense head. The three flags are the
// ablation axes; everything else is shape plumbing.
struct ModelConfig {
  bool use_slpa = false;
  bool use_msfem = false;
  bool use_align = false;
  int stem_width = 8;
  std::array<int, 4> widths{8, 16, 32, 32};
  int pyramid_width = 16;
  int num_classes = 3;

  BackboneConfig backbone() const {
    BackboneConfig b;
    b.stem_width = stem_width;
    b.widths = widths;
    b.use_slpa = use_slpa;
    return b;
  }
  PyramidConfig pyramid() const {
    PyramidConfig p;
    p.in_channels = widths;
    p.width = pyramid_width;
    p.use_msfem = use_msfem;
    p.use_align = use_align;
    return p;
  }
  HeadConfig head() const {
    HeadConfig h;
    h.width = pyramid_width;
    h.num_classes = num_classes;
    return h;
  }
  void validate() const {
    backbone().validate();
    pyramid().validate();
    head().validate();
    if (use_msfem && widths[3] % 4 != 0)
      throw ConfigError("model: C5 width must be divisible by 4 when use_msfem is on");
  }
};

template <class T>
Params<T> init_model_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Params<T> params;
  SplitMix64 rng(seed);
  add_backbone_params(params, "backbone", cfg.backbone(), rng);
  add_pyramid_params(params, "fpn", cfg.pyramid(), rng);
  add_head_params(params, "head", cfg.head(), rng);
  return params;
}

template <class T>
HeadOutputs model_forward(Tape<T>& t, int image, const ModelConfig& cfg, TapedParams<T>& tp,
                          bool train) {
  auto c = backbone_forward(t, image, cfg.backbone(), tp, "backbone", train);
  auto p = build_pyramid(t, c, cfg.pyramid(), tp, "fpn", train);
  return head_forward(t, p, cfg.head(), tp, "head");
}

// Eval-mode forward returning raw head tensors, ready for decoding.
template <class T>
void model_predict(const Tensor4<T>& image, const ModelConfig& cfg, Params<T>& params,
                   std::array<Tensor4<T>, 4>& cls, std::array<Tensor4<T>, 4>& box) {
  Tape<T> t;
  TapedParams<T> tp(t, params);
  HeadOutputs out = model_forward(t, t.leaf(image), cfg, tp, false);
  for (int l = 0; l < 4; ++l) {
    cls[l] = t.val(out.cls[l]);
    box[l] = t.val(out.box[l]);
  }
}

}  // namespace sodm
