#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "sodm/boxes.hpp"
#include "sodm/init.hpp"
#include "sodm/nn.hpp"
#include "sodm/ops_basic.hpp"

namespace sodm {

// Anchor-free per-cell detection head over P2..P5 (strides 4/8/16/32).
// One shared 3x3 tower + ReLU feeds two 1x1 convs: per-class logits and
// (dx, dy, dw, dh) box deltas. The final convs start at zero so every score
// opens at sigmoid(0) = 0.5.

inline constexpr std::array<int, 4> kLevelStrides{4, 8, 16, 32};

struct HeadConfig {
  int width = 16;       // pyramid width feeding the head
  int num_classes = 3;

  void validate() const {
    if (width <= 0 || num_classes <= 0) throw ConfigError("head: non-positive dimension");
  }
};

struct HeadOutputs {
  std::array<int, 4> cls{};  // (n, num_classes, h_l, w_l)
  std::array<int, 4> box{};  // (n, 4, h_l, w_l)
};

template <class T>
void add_head_params(Params<T>& params, const std::string& prefix, const HeadConfig& cfg,
                     SplitMix64& rng) {
  cfg.validate();
  add_conv_params(params, prefix + ".tower", ConvSpec::same(cfg.width, cfg.width, 3), rng);
  add_conv_params(params, prefix + ".cls", ConvSpec::same(cfg.width, cfg.num_classes, 1), rng,
                  /*zero_init=*/true);
  add_conv_params(params, prefix + ".box", ConvSpec::same(cfg.width, 4, 1), rng,
                  /*zero_init=*/true);
}

template <class T>
HeadOutputs head_forward(Tape<T>& t, const std::array<int, 4>& pyramid, const HeadConfig& cfg,
                         TapedParams<T>& tp, const std::string& prefix) {
  cfg.validate();
  HeadOutputs out;
  for (int i = 0; i < 4; ++i) {
    int x = taped_conv(t, tp, prefix + ".tower", pyramid[i], ConvSpec::same(cfg.width, cfg.width, 3));
    x = ops::activation(t, x, ops::Activation::Relu);
    out.cls[i] = taped_conv(t, tp, prefix + ".cls", x, ConvSpec::same(cfg.width, cfg.num_classes, 1));
    out.box[i] = taped_conv(t, tp, prefix + ".box", x, ConvSpec::same(cfg.width, 4, 1));
  }
  return out;
}

// A box lives on the level whose scale window contains max(w, h):
// level l covers [8·2^l, 8·2^{l+1}), clamped to the P2/P5 ends.
inline int level_for_box(const Box& b) {
  double m = std::max(b.w, b.h);
  int l = 0;
  while (l < 3 && m >= 8.0 * (1 << (l + 1))) ++l;
  return l;
}

// Per-level dense targets; grids follow the pyramid dims for an image of
// (img_h, img_w) pixels.
template <class T>
struct DetectionTargets {
  std::array<Tensor4<T>, 4> cls;   // one-hot per positive cell
  std::array<Tensor4<T>, 4> box;   // (tx, ty, tw, th), zero at negatives
  std::array<Tensor4<T>, 4> pos;   // (n, 1, h, w) positive mask
  long total_entries = 0;          // all cls logits across levels
  long num_pos = 0;
};

// Positive cells are those whose center falls inside a ground-truth box of
// the cell's level; overlaps resolve to the smallest-area box (then lowest
// index).
template <class T>
DetectionTargets<T> encode_targets(const std::vector<GroundTruthBox>& gts, int n, int img_h,
                                   int img_w, int num_classes) {
  if (img_h % 32 != 0 || img_w % 32 != 0)
    throw ShapeError("encode_targets: image size " + std::to_string(img_h) + "x" +
                     std::to_string(img_w) + " not divisible by 32");
  DetectionTargets<T> tg;
  for (int l = 0; l < 4; ++l) {
    int s = kLevelStrides[l];
    int h = img_h / s, w = img_w / s;
    tg.cls[l] = Tensor4<T>(n, num_classes, h, w);
    tg.box[l] = Tensor4<T>(n, 4, h, w);
    tg.pos[l] = Tensor4<T>(n, 1, h, w);
    tg.total_entries += static_cast<long>(n) * num_classes * h * w;
  }
  for (int l = 0; l < 4; ++l) {
    int s = kLevelStrides[l];
    int h = img_h / s, w = img_w / s;
    for (int b = 0; b < n; ++b)
      for (int cy = 0; cy < h; ++cy)
        for (int cx = 0; cx < w; ++cx) {
          double py = (cy + 0.5) * s, px = (cx + 0.5) * s;
          int chosen = -1;
          for (size_t g = 0; g < gts.size(); ++g) {
            const GroundTruthBox& gt = gts[g];
            if (gt.image_id != b || level_for_box(gt.box) != l) continue;
            if (gt.class_id < 0 || gt.class_id >= num_classes)
              throw ConfigError("encode_targets: class id " + std::to_string(gt.class_id) +
                                " outside [0, " + std::to_string(num_classes) + ")");
            if (px < gt.box.x || px >= gt.box.x + gt.box.w || py < gt.box.y ||
                py >= gt.box.y + gt.box.h)
              continue;
            if (chosen < 0 || gt.area() < gts[chosen].area()) chosen = static_cast<int>(g);
          }
          if (chosen < 0) continue;
          const GroundTruthBox& gt = gts[chosen];
          tg.pos[l].at(b, 0, cy, cx) = T(1);
          tg.cls[l].at(b, gt.class_id, cy, cx) = T(1);
          tg.box[l].at(b, 0, cy, cx) = static_cast<T>((gt.box.x + gt.box.w / 2 - px) / s);
          tg.box[l].at(b, 1, cy, cx) = static_cast<T>((gt.box.y + gt.box.h / 2 - py) / s);
          tg.box[l].at(b, 2, cy, cx) = static_cast<T>(std::log(gt.box.w / s));
          tg.box[l].at(b, 3, cy, cx) = static_cast<T>(std::log(gt.box.h / s));
          ++tg.num_pos;
        }
  }
  return tg;
}

template <class T>
struct DetectionLoss {
  int id = -1;     // scalar tape node (1x1x1x1)
  T total = T(0);  // forward values, for logging
  T cls = T(0);
  T box = T(0);
};

// Positive class entries are rare (a handful of cells against thousands of
// background logits), so their BCE terms get a fixed weight; without it the
// per-class gradient at object cells is diluted by the mean over all entries
// and class confusion dominates the residual error.
inline constexpr double kClsPosWeight = 8.0;

// total = mean binary cross-entropy over every class logit (all levels,
//         positive entries weighted by kClsPosWeight)
//       + sum of L1 box errors over positive cells / (4 * num_pos).
template <class T>
DetectionLoss<T> detection_loss(Tape<T>& t, const HeadOutputs& head,
                                const DetectionTargets<T>& tg) {
  std::array<Tensor4<T>, 4> cls_v, box_v;
  for (int l = 0; l < 4; ++l) {
    cls_v[l] = t.val(head.cls[l]);
    box_v[l] = t.val(head.box[l]);
    for (T v : cls_v[l].data)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError("detection_loss: non-finite class logit at level " + std::to_string(l));
    for (T v : box_v[l].data)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError("detection_loss: non-finite box delta at level " + std::to_string(l));
    if (!cls_v[l].same_dims(tg.cls[l]) || !box_v[l].same_dims(tg.box[l]))
      throw ShapeError("detection_loss: level " + std::to_string(l) + " outputs " +
                       cls_v[l].shape_str() + "/" + box_v[l].shape_str() + " vs targets " +
                       tg.cls[l].shape_str() + "/" + tg.box[l].shape_str());
  }
  T cls_sum = T(0), box_sum = T(0);
  for (int l = 0; l < 4; ++l) {
    const Tensor4<T>& z = cls_v[l];
    for (size_t i = 0; i < z.numel(); ++i) {
      T zi = z.data[i], y = tg.cls[l].data[i];
      T wgt = y > T(0) ? static_cast<T>(kClsPosWeight) : T(1);
      // stable BCE-with-logits: max(z,0) - z*y + log1p(exp(-|z|))
      cls_sum += wgt * (std::max(zi, T(0)) - zi * y + std::log1p(std::exp(-std::abs(zi))));
    }
    const Tensor4<T>& p = box_v[l];
    for (int b = 0; b < p.n; ++b)
      for (int cy = 0; cy < p.h; ++cy)
        for (int cx = 0; cx < p.w; ++cx) {
          if (tg.pos[l].at(b, 0, cy, cx) == T(0)) continue;
          for (int k = 0; k < 4; ++k)
            box_sum += std::abs(p.at(b, k, cy, cx) - tg.box[l].at(b, k, cy, cx));
        }
  }
  DetectionLoss<T> out;
  out.cls = cls_sum / static_cast<T>(tg.total_entries);
  out.box = tg.num_pos > 0 ? box_sum / static_cast<T>(4 * tg.num_pos) : T(0);
  out.total = out.cls + out.box;

  Tensor4<T> scalar(1, 1, 1, 1, out.total);
  std::vector<int> inputs;
  for (int l = 0; l < 4; ++l) inputs.push_back(head.cls[l]);
  for (int l = 0; l < 4; ++l) inputs.push_back(head.box[l]);
  long total_entries = tg.total_entries, num_pos = tg.num_pos;
  auto targets = tg;  // captured by value for the backward pass
  out.id = t.push(std::move(scalar), inputs,
                  [cls_v, box_v, targets, total_entries, num_pos](const Tensor4<T>& g) {
    T gs = g.data[0];
    std::vector<Tensor4<T>> grads;
    for (int l = 0; l < 4; ++l) {
      Tensor4<T> gz = Tensor4<T>::zeros_like(cls_v[l]);
      for (size_t i = 0; i < gz.numel(); ++i) {
        T zi = cls_v[l].data[i];
        T y = targets.cls[l].data[i];
        T wgt = y > T(0) ? static_cast<T>(kClsPosWeight) : T(1);
        T sig = T(1) / (T(1) + std::exp(-zi));
        gz.data[i] = gs * wgt * (sig - y) / static_cast<T>(total_entries);
      }
      grads.push_back(std::move(gz));
    }
    for (int l = 0; l < 4; ++l) {
      Tensor4<T> gb = Tensor4<T>::zeros_like(box_v[l]);
      if (num_pos > 0) {
        const Tensor4<T>& p = box_v[l];
        for (int b = 0; b < p.n; ++b)
          for (int cy = 0; cy < p.h; ++cy)
            for (int cx = 0; cx < p.w; ++cx) {
              if (targets.pos[l].at(b, 0, cy, cx) == T(0)) continue;
              for (int k = 0; k < 4; ++k) {
                T d = p.at(b, k, cy, cx) - targets.box[l].at(b, k, cy, cx);
                T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                gb.at(b, k, cy, cx) = gs * sgn / static_cast<T>(4 * num_pos);
              }
            }
      }
      grads.push_back(std::move(gb));
    }
    return grads;
  });
  return out;
}

// Decode dense head outputs into detections: per-cell sigmoid scores above
// `score_thresh`, then greedy class-wise NMS at `nms_iou`, sorted by
// descending score.
template <class T>
std::vector<Detection> decode_detections(const std::array<Tensor4<T>, 4>& cls_logits,
                                         const std::array<Tensor4<T>, 4>& box_deltas,
                                         double score_thresh, double nms_iou) {
  if (score_thresh < 0 || score_thresh > 1 || nms_iou <= 0 || nms_iou > 1)
    throw ConfigError("decode_detections: thresholds out of range");
  std::vector<Detection> cands;
  for (int l = 0; l < 4; ++l) {
    const Tensor4<T>& z = cls_logits[l];
    const Tensor4<T>& d = box_deltas[l];
    int s = kLevelStrides[l];
    for (int b = 0; b < z.n; ++b)
      for (int cy = 0; cy < z.h; ++cy)
        for (int cx = 0; cx < z.w; ++cx)
          for (int c = 0; c < z.c; ++c) {
            double score = 1.0 / (1.0 + std::exp(-static_cast<double>(z.at(b, c, cy, cx))));
            if (score < score_thresh) continue;
            double px = (cx + 0.5) * s, py = (cy + 0.5) * s;
            double bx = px + static_cast<double>(d.at(b, 0, cy, cx)) * s;
            double by = py + static_cast<double>(d.at(b, 1, cy, cx)) * s;
            double tw = std::clamp(static_cast<double>(d.at(b, 2, cy, cx)), -6.0, 6.0);
            double th = std::clamp(static_cast<double>(d.at(b, 3, cy, cx)), -6.0, 6.0);
            double w = s * std::exp(tw), h = s * std::exp(th);
            Detection det;
            det.image_id = b;
            det.box = Box{bx - w / 2, by - h / 2, w, h};
            det.class_id = c;
            det.score = score;
            det.level = l;
            cands.push_back(det);
          }
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const Detection& c : cands) {
    bool suppressed = false;
    for (const Detection& k : kept)
      if (k.image_id == c.image_id && k.class_id == c.class_id && iou(k.box, c.box) > nms_iou) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

// Ideal head outputs for a ground-truth set: saturated logits (+/-M) and
// exact regression targets. decode(encode(gts)) recovers every box.
template <class T>
void encode_ideal_outputs(const std::vector<GroundTruthBox>& gts, int n, int img_h, int img_w,
                          int num_classes, std::array<Tensor4<T>, 4>& cls,
                          std::array<Tensor4<T>, 4>& box, T magnitude = T(20)) {
  auto tg = encode_targets<T>(gts, n, img_h, img_w, num_classes);
  for (int l = 0; l < 4; ++l) {
    cls[l] = Tensor4<T>(tg.cls[l].n, tg.cls[l].c, tg.cls[l].h, tg.cls[l].w);
    for (size_t i = 0; i < cls[l].numel(); ++i)
      cls[l].data[i] = tg.cls[l].data[i] > T(0) ? magnitude : -magnitude;
    box[l] = tg.box[l];
  }
}

}  // namespace sodm
