#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <vector>

#include "sodm/boxes.hpp"

namespace sodm {

// COCO-protocol evaluation: greedy score-ordered matching, 101-point
// interpolated AP, mean over IoU thresholds 0.50..0.95, size strata on
// ground-truth area. All tie-breaks are stated and deterministic:
// equal scores keep input order (stable sort), equal IoU prefers the lower
// ground-truth index.

inline constexpr int kMaxDetsPerImage = 100;
inline constexpr double kSmallAreaMax = 1024.0;   // 32*32
inline constexpr double kMediumAreaMax = 9216.0;  // 96*96

// Match detections against ground truths of one image and one class.
// Returns TP (1) / FP (0) flags aligned with the input detection order.
inline std::vector<char> match_detections(const std::vector<Detection>& dets,
                                          const std::vector<GroundTruthBox>& gts,
                                          double iou_thresh) {
  std::vector<size_t> order(dets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
  std::vector<char> gt_used(gts.size(), 0);
  std::vector<char> flags(dets.size(), 0);
  for (size_t oi : order) {
    int best = -1;
    double best_iou = 0;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g]) continue;
      double v = iou(dets[oi].box, gts[g].box);
      if (v >= iou_thresh && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      gt_used[best] = 1;
      flags[oi] = 1;
    }
  }
  return flags;
}

// 101-point interpolated average precision. `scored_flags` carries
// (score, is_tp); num_gt == 0 yields NaN (undefined).
inline double average_precision(std::vector<std::pair<double, char>> scored_flags, int num_gt) {
  if (num_gt == 0) return std::numeric_limits<double>::quiet_NaN();
  std::stable_sort(scored_flags.begin(), scored_flags.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  size_t n = scored_flags.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0, fp = 0;
  for (size_t i = 0; i < n; ++i) {
    if (scored_flags[i].second)
      ++tp;
    else
      ++fp;
    precision[i] = static_cast<double>(tp) / (tp + fp);
    recall[i] = static_cast<double>(tp) / num_gt;
  }
  // precision envelope: running max from the right
  for (size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double total = 0;
  size_t j = 0;
  for (int k = 0; k <= 100; ++k) {
    double r = k / 100.0;
    while (j < n && recall[j] < r) ++j;
    if (j < n) total += precision[j];
  }
  return total / 101.0;
}

struct EvalResult {
  double ap = std::numeric_limits<double>::quiet_NaN();
  double ap50 = std::numeric_limits<double>::quiet_NaN();
  double ap75 = std::numeric_limits<double>::quiet_NaN();
  double ap_s = std::numeric_limits<double>::quiet_NaN();
  double ap_m = std::numeric_limits<double>::quiet_NaN();
  double ap_l = std::numeric_limits<double>::quiet_NaN();
};

enum class Stratum { All, Small, Medium, Large };

inline bool in_stratum(double area, Stratum s) {
  switch (s) {
    case Stratum::All: return true;
    case Stratum::Small: return area < kSmallAreaMax;
    case Stratum::Medium: return area >= kSmallAreaMax && area <= kMediumAreaMax;
    case Stratum::Large: return area > kMediumAreaMax;
  }
  return false;
}

namespace detail {

// Keep the top kMaxDetsPerImage detections per image by score, stable.
inline std::vector<Detection> cap_max_dets(const std::vector<Detection>& dets) {
  std::map<int, std::vector<size_t>> per_image;
  for (size_t i = 0; i < dets.size(); ++i) per_image[dets[i].image_id].push_back(i);
  std::vector<char> keep(dets.size(), 0);
  for (auto& [img, idx] : per_image) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
    for (size_t k = 0; k < idx.size() && k < static_cast<size_t>(kMaxDetsPerImage); ++k)
      keep[idx[k]] = 1;
  }
  std::vector<Detection> out;
  for (size_t i = 0; i < dets.size(); ++i)
    if (keep[i]) out.push_back(dets[i]);
  return out;
}

// AP of one (class, stratum, threshold) triple, NaN when the class has no
// in-stratum ground truth. Detections matching only out-of-stratum GTs are
// dropped from the precision/recall curve rather than counted as FP.
inline double class_ap(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                       int cls, Stratum stratum, double thresh) {
  std::vector<size_t> gidx;
  int num_gt = 0;
  for (size_t g = 0; g < gts.size(); ++g)
    if (gts[g].class_id == cls) {
      gidx.push_back(g);
      if (in_stratum(gts[g].area(), stratum)) ++num_gt;
    }
  if (num_gt == 0) return std::numeric_limits<double>::quiet_NaN();

  std::vector<size_t> didx;
  for (size_t i = 0; i < dets.size(); ++i)
    if (dets[i].class_id == cls) didx.push_back(i);
  std::stable_sort(didx.begin(), didx.end(),
                   [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });

  std::vector<char> gt_used(gidx.size(), 0);
  std::vector<std::pair<double, char>> scored_flags;
  for (size_t di : didx) {
    const Detection& d = dets[di];
    int best = -1, best_ign = -1;
    double best_iou = 0, best_ign_iou = 0;
    for (size_t k = 0; k < gidx.size(); ++k) {
      const GroundTruthBox& g = gts[gidx[k]];
      if (gt_used[k] || g.image_id != d.image_id) continue;
      double v = iou(d.box, g.box);
      if (v < thresh) continue;
      if (in_stratum(g.area(), stratum)) {
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(k);
        }
      } else if (v > best_ign_iou) {
        best_ign_iou = v;
        best_ign = static_cast<int>(k);
      }
    }
    if (best >= 0) {
      gt_used[best] = 1;
      scored_flags.emplace_back(d.score, 1);
    } else if (best_ign >= 0) {
      gt_used[best_ign] = 1;  // ignored: excluded from the curve entirely
    } else {
      scored_flags.emplace_back(d.score, 0);
    }
  }
  return average_precision(std::move(scored_flags), num_gt);
}

// Mean AP over classes with >=1 in-stratum GT, over the given thresholds.
inline double stratum_ap(const std::vector<Detection>& dets,
                         const std::vector<GroundTruthBox>& gts, Stratum stratum,
                         const std::vector<double>& thresholds) {
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  double total = 0;
  int count = 0;
  for (double th : thresholds) {
    double cls_total = 0;
    int cls_count = 0;
    for (int c : classes) {
      double ap = class_ap(dets, gts, c, stratum, th);
      if (!std::isnan(ap)) {
        cls_total += ap;
        ++cls_count;
      }
    }
    if (cls_count > 0) {
      total += cls_total / cls_count;
      ++count;
    }
  }
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  return total / count;
}

}  // namespace detail

inline std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

inline EvalResult evaluate(const std::vector<Detection>& dets_in,
                           const std::vector<GroundTruthBox>& gts) {
  std::vector<Detection> dets = detail::cap_max_dets(dets_in);
  std::vector<double> all = coco_iou_thresholds();
  EvalResult r;
  r.ap = detail::stratum_ap(dets, gts, Stratum::All, all);
  r.ap50 = detail::stratum_ap(dets, gts, Stratum::All, {0.50});
  r.ap75 = detail::stratum_ap(dets, gts, Stratum::All, {0.75});
  r.ap_s = detail::stratum_ap(dets, gts, Stratum::Small, all);
  r.ap_m = detail::stratum_ap(dets, gts, Stratum::Medium, all);
  r.ap_l = detail::stratum_ap(dets, gts, Stratum::Large, all);
  return r;
}

}  // namespace sodm
