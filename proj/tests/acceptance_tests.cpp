// Acceptance suite: one pass/fail line per criterion, exit 0 only if all pass.
// Each criterion is self-contained and uses independently seeded inputs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sodm/deform.hpp"
#include "sodm/gradcheck.hpp"
#include "sodm/model.hpp"
#include "sodm/msfem.hpp"
#include "sodm/slpa.hpp"
#include "sodm/synth.hpp"
#include "sodm/train.hpp"

using namespace sodm;
using namespace sodm::ops;
namespace fs = std::filesystem;

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct Criterion {
  int number;
  std::string name;
  bool pass = true;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

double max_abs_diff(const Tensor4d& a, const Tensor4d& b) {
  if (!a.same_dims(b)) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Criterion 1: finite-difference gradient suite over every backward rule.
// ---------------------------------------------------------------------------
void criterion_gradients(Criterion& c) {
  double t0 = now_s();
  auto check = [&](const std::string& op, const GradCheckReport& rep) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s max_rel_err=%.2e", op.c_str(), rep.max_rel_err);
    c.expect(rep.pass, buf);
  };

  {  // primitive ops, shared inputs within the <=2x8x8x8 budget
    SplitMix64 rng(22);
    auto x = Tensor4d::random_uniform(2, 4, 5, 5, rng, -1.0, 1.0);
    auto w = Tensor4d::random_uniform(3, 4, 3, 3, rng, -0.5, 0.5);
    auto b = Tensor4d::random_uniform(1, 3, 1, 1, rng, -0.5, 0.5);
    auto gamma = Tensor4d::random_uniform(1, 4, 1, 1, rng, 0.5, 1.5);
    auto beta = Tensor4d::random_uniform(1, 4, 1, 1, rng, -0.5, 0.5);

    ConvSpec cs = ConvSpec::same(4, 3, 3, 2);
    check("conv2d", finite_diff_check(
                        [&](Taped& t, const std::vector<int>& ids) {
                          return conv2d(t, ids[0], ids[1], ids[2], cs);
                        },
                        {x, w, b}));
    for (auto mode : {PoolMode::Max, PoolMode::Avg})
      check("pool_channel", finite_diff_check(
                                [&](Taped& t, const std::vector<int>& ids) {
                                  return pool_channel(t, ids[0], mode);
                                },
                                {x}));
    for (bool train : {true, false})
      check("batch_norm", finite_diff_check(
                              [&](Taped& t, const std::vector<int>& ids) {
                                Tensor4d rm(1, 4, 1, 1, 0.1), rv(1, 4, 1, 1, 0.9);
                                return batch_norm(t, ids[0], ids[1], ids[2], rm, rv, train);
                              },
                              {x, gamma, beta}));
    Tensor4d xs = x;  // relu-family kinks break finite differences at zero
    for (auto& v : xs.data) v += (v >= 0 ? 0.3 : -0.3);
    for (auto kind : {Activation::Relu, Activation::LeakyRelu, Activation::Sigmoid})
      check("activation", finite_diff_check(
                              [&](Taped& t, const std::vector<int>& ids) {
                                return activation(t, ids[0], kind);
                              },
                              {xs}));
    for (int groups : {1, 2})
      check("softmax", finite_diff_check(
                           [&](Taped& t, const std::vector<int>& ids) {
                             return softmax_channel(t, ids[0], groups);
                           },
                           {x}));
    for (auto mode : {UpsampleMode::Nearest, UpsampleMode::Bilinear})
      check("upsample", finite_diff_check(
                            [&](Taped& t, const std::vector<int>& ids) {
                              return upsample(t, ids[0], 8, 8, mode);
                            },
                            {x}));
    check("unfold", finite_diff_check(
                        [&](Taped& t, const std::vector<int>& ids) {
                          return unfold_dilated(t, ids[0], 3, 2);
                        },
                        {x}));
  }

  {  // adaptive kernel prediction + application
    AdaptiveConvSpec spec;
    spec.dilation = 2;
    spec.in_channels = 2;
    Paramsd params;
    SplitMix64 rng(3);
    add_adaptive_conv_params(params, "ac", spec, rng);
    for (auto& v : params.at("ac.compress.w").data) v *= 0.2;
    auto x = Tensor4d::random_uniform(1, 2, 5, 5, rng, 0.2, 1.2);
    check("adaptive_kernel_predict+apply",
          module_gradcheck(params, {x},
                           [&](Taped& t, const std::vector<int>& ids, TapedParams<double>& tp) {
                             int k = adaptive_kernel_predict(t, ids[0], spec, tp, "ac", false);
                             return adaptive_conv_apply(t, ids[0], k, spec);
                           }));
  }

  {  // deformable conv, offsets included as a differentiated leaf
    SplitMix64 rng(3);
    auto x = Tensor4d::random_uniform(1, 2, 6, 6, rng, -1.0, 1.0);
    auto w = Tensor4d::random_uniform(2, 2, 3, 3, rng, -0.5, 0.5);
    auto b = Tensor4d::random_uniform(1, 2, 1, 1, rng, -0.5, 0.5);
    Tensor4d off(1, 18, 6, 6);
    for (auto& v : off.data) v = 0.3 + 0.2 * rng.uniform(-1.0, 1.0);
    check("deform_conv2d", finite_diff_check(
                               [&](Taped& t, const std::vector<int>& ids) {
                                 return deform_conv2d(t, ids[0], ids[1], ids[2], ids[3], 3, 1);
                               },
                               {x, off, w, b}));
  }

  {  // slpa_forward
    SlpaConfig cfg;
    Paramsd params;
    SplitMix64 rng(12);
    add_slpa_params(params, "slpa", cfg, rng);
    SplitMix64 wrng(13);
    for (auto& v : params.at("slpa.fuse.w").data) v = wrng.uniform(-0.5, 0.5);
    SplitMix64 rng2(14);
    auto fc = Tensor4d::random_uniform(1, 4, 6, 6, rng2, -1.0, 1.0);
    check("slpa_forward",
          module_gradcheck(params, {fc},
                           [&](Taped& t, const std::vector<int>& ids, TapedParams<double>& tp) {
                             return slpa_forward(t, ids[0], cfg, tp, "slpa").rescaled;
                           }));
  }

  {  // msfem_forward with train-mode statistics
    MsfemConfig cfg;
    cfg.in_channels = 4;
    cfg.out_channels = 2;
    Paramsd params;
    SplitMix64 rng(18);
    add_msfem_params(params, "msfem", cfg, rng);
    SplitMix64 rng2(19);
    auto y = Tensor4d::random_uniform(1, 4, 5, 5, rng2, -1.0, 1.0);
    check("msfem_forward",
          module_gradcheck(params, {y},
                           [&](Taped& t, const std::vector<int>& ids, TapedParams<double>& tp) {
                             return msfem_forward(t, ids[0], cfg, tp, "msfem", true);
                           }));
  }

  {  // align_fuse
    Paramsd params;
    SplitMix64 rng(11);
    add_align_params<double>(params, "align", 2, rng);
    for (auto& v : params.at("align.offset.w").data) v = rng.uniform(-0.3, 0.3);
    for (auto& v : params.at("align.offset.b").data) v = 0.3;  // off grid lines
    SplitMix64 rng2(12);
    auto top = Tensor4d::random_uniform(1, 2, 3, 3, rng2, -1.0, 1.0);
    auto lat = Tensor4d::random_uniform(1, 2, 6, 6, rng2, -1.0, 1.0);
    check("align_fuse",
          module_gradcheck(params, {top, lat},
                           [&](Taped& t, const std::vector<int>& ids, TapedParams<double>& tp) {
                             return align_fuse(t, ids[0], ids[1], tp, "align");
                           }));
  }

  {  // build_pyramid with both modules enabled
    PyramidConfig cfg;
    cfg.in_channels = {2, 2, 4, 4};
    cfg.width = 2;
    cfg.use_msfem = true;
    cfg.use_align = true;
    Paramsd params;
    SplitMix64 rng(41);
    add_pyramid_params(params, "fpn", cfg, rng);
    for (auto& e : params.entries())
      if (e.learnable && e.name.find("offset") != std::string::npos)
        for (auto& v : e.tensor.data) v = rng.uniform(-0.3, 0.3);
    SplitMix64 rng2(42);
    std::vector<Tensor4d> feats{Tensor4d::random_uniform(1, 2, 8, 8, rng2, -1.0, 1.0),
                                Tensor4d::random_uniform(1, 2, 4, 4, rng2, -1.0, 1.0),
                                Tensor4d::random_uniform(1, 4, 2, 2, rng2, -1.0, 1.0),
                                Tensor4d::random_uniform(1, 4, 1, 1, rng2, -1.0, 1.0)};
    check("build_pyramid",
          module_gradcheck(params, feats,
                           [&](Taped& t, const std::vector<int>& ids, TapedParams<double>& tp) {
                             auto p = build_pyramid(t, {ids[0], ids[1], ids[2], ids[3]}, cfg, tp,
                                                    "fpn", true);
                             int total = sum(t, p[0]);
                             for (int i = 1; i < 4; ++i) total = add(t, total, sum(t, p[i]));
                             return total;
                           }));
  }

  {  // head_forward across all four levels
    HeadConfig cfg;
    cfg.width = 2;
    cfg.num_classes = 2;
    Paramsd params;
    SplitMix64 rng(56);
    add_head_params(params, "head", cfg, rng);
    for (auto& v : params.at("head.cls.w").data) v = rng.uniform(-0.3, 0.3);
    for (auto& v : params.at("head.box.w").data) v = rng.uniform(-0.3, 0.3);
    SplitMix64 rng2(57);
    std::vector<Tensor4d> feats;
    int hw[4] = {6, 3, 2, 1};
    for (int i = 0; i < 4; ++i)
      feats.push_back(Tensor4d::random_uniform(1, 2, hw[i], hw[i], rng2, -1.0, 1.0));
    check("head_forward",
          module_gradcheck(params, feats,
                           [&](Taped& t, const std::vector<int>& ids, TapedParams<double>& tp) {
                             auto out = head_forward(t, {ids[0], ids[1], ids[2], ids[3]}, cfg, tp,
                                                     "head");
                             int total = sum(t, out.cls[0]);
                             for (int i = 1; i < 4; ++i)
                               total = add(t, total, sum(t, out.cls[i]));
                             for (int i = 0; i < 4; ++i)
                               total = add(t, total, sum(t, out.box[i]));
                             return total;
                           }));
  }

  double elapsed = now_s() - t0;
  c.expect(elapsed < 120.0, "runtime " + std::to_string(elapsed) + "s >= 120s");
  char buf[48];
  std::snprintf(buf, sizeof(buf), "runtime %.1fs", elapsed);
  c.note(buf);
}

// ---------------------------------------------------------------------------
// Criterion 2: degenerate equivalences.
// ---------------------------------------------------------------------------
void criterion_degenerate(Criterion& c) {
  {  // (a) zero offsets: deform == conv
    SplitMix64 rng(1);
    auto x = Tensor4d::random_uniform(2, 3, 8, 8, rng, -1.0, 1.0);
    for (int k : {1, 3})
      for (int r : {1, 2}) {
        auto w = Tensor4d::random_uniform(4, 3, k, k, rng, -1.0, 1.0);
        auto b = Tensor4d::random_uniform(1, 4, 1, 1, rng, -1.0, 1.0);
        Tensor4d off(2, 2 * k * k, 8, 8);
        Taped t;
        int got = deform_conv2d(t, t.leaf(x), t.leaf(off), t.leaf(w), t.leaf(b), k, r);
        int want = conv2d(t, t.leaf(x), t.leaf(w), t.leaf(b), ConvSpec::same(3, 4, k, r));
        double d = max_abs_diff(t.val(got), t.val(want));
        c.expect(d <= 1e-12, "zero-offset deform vs conv diff " + std::to_string(d));
      }
  }
  {  // (b) uniform 1/9 kernels: zero-padded 3x3 box filter
    SplitMix64 rng(7);
    auto x = Tensor4d::random_uniform(1, 3, 5, 5, rng, -1.0, 1.0);
    AdaptiveConvSpec spec;
    spec.in_channels = 3;
    Taped t;
    auto out = t.val(adaptive_conv_apply(t, t.leaf(x), t.leaf(Tensor4d(1, 1, 9, 25, 1.0 / 9.0)),
                                         spec));
    for (int ch = 0; ch < 3 && c.pass; ++ch)
      for (int y = 0; y < 5; ++y)
        for (int xx = 0; xx < 5; ++xx) {
          double s = 0.0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              int iy = y + dy, ix = xx + dx;
              if (iy >= 0 && iy < 5 && ix >= 0 && ix < 5) s += x.at(0, ch, iy, ix);
            }
          c.expect(std::fabs(out.at(0, ch, y, xx) - s / 9.0) <= 1e-12,
                   "uniform-kernel box filter mismatch");
        }
  }
  {  // (c) both flags off: plain FPN composition
    PyramidConfig cfg;
    cfg.in_channels = {2, 3, 4, 4};
    cfg.width = 3;
    Paramsd params;
    SplitMix64 rng(30);
    add_pyramid_params(params, "fpn", cfg, rng);
    SplitMix64 rng2(31);
    std::vector<Tensor4d> feats;
    int hw[4] = {8, 4, 2, 1};
    for (int i = 0; i < 4; ++i)
      feats.push_back(
          Tensor4d::random_uniform(1, cfg.in_channels[i], hw[i], hw[i], rng2, -1.0, 1.0));

    Taped t;
    TapedParams<double> tp(t, params);
    std::array<int, 4> ids{t.leaf(feats[0]), t.leaf(feats[1]), t.leaf(feats[2]),
                           t.leaf(feats[3])};
    auto p = build_pyramid(t, ids, cfg, tp, "fpn", false);

    Taped t2;
    TapedParams<double> tp2(t2, params);
    std::array<int, 4> lat{};
    for (int i = 0; i < 4; ++i)
      lat[i] = taped_conv(t2, tp2, "fpn.lateral" + std::to_string(i), t2.leaf(feats[i]),
                          ConvSpec::same(cfg.in_channels[i], cfg.width, 1));
    std::array<int, 4> merged{};
    merged[3] = lat[3];
    for (int i = 2; i >= 0; --i) {
      int up = upsample(t2, merged[i + 1], feats[i].h, feats[i].w, UpsampleMode::Nearest);
      merged[i] = add(t2, up, lat[i]);
    }
    for (int i = 0; i < 4; ++i) {
      int want = taped_conv(t2, tp2, "fpn.smooth" + std::to_string(i), merged[i],
                            ConvSpec::same(cfg.width, cfg.width, 3));
      double d = max_abs_diff(t.val(p[i]), t2.val(want));
      c.expect(d <= 1e-12, "flags-off pyramid level " + std::to_string(i) + " diff " +
                               std::to_string(d));
    }
  }
  {  // (d) zero-init attention scales features by exactly 0.5
    SlpaConfig cfg;
    Paramsd params;
    SplitMix64 rng(1);
    add_slpa_params(params, "slpa", cfg, rng);
    SplitMix64 rng2(2);
    auto fc = Tensor4d::random_uniform(2, 8, 8, 8, rng2, -2.0, 2.0);
    Taped t;
    TapedParams<double> tp(t, params);
    auto out = slpa_forward(t, t.leaf(fc), cfg, tp, "slpa");
    const auto& ms = t.val(out.attention_map);
    const auto& fs = t.val(out.rescaled);
    for (double v : ms.data) c.expect(v == 0.5, "attention map entry != 0.5");
    for (size_t i = 0; i < fc.numel(); ++i)
      c.expect(fs.data[i] == 0.5 * fc.data[i], "rescaled feature != exactly half");
  }
}

// ---------------------------------------------------------------------------
// Criterion 3: spatially constant kernels reduce to a dilated conv.
// ---------------------------------------------------------------------------
void criterion_constant_kernels(Criterion& c) {
  SplitMix64 rng(10);
  auto x = Tensor4d::random_uniform(1, 2, 8, 8, rng, -1.0, 1.0);
  for (int r : {1, 2, 3, 4}) {
    Tensor4d kern(1, 1, 3, 3);
    for (auto& v : kern.data) v = rng.uniform(-1.0, 1.0);
    Tensor4d x2(1, 1, 9, 64);
    for (int q = 0; q < 9; ++q)
      for (int pos = 0; pos < 64; ++pos) x2.at(0, 0, q, pos) = kern.data[q];
    AdaptiveConvSpec spec;
    spec.in_channels = 2;
    spec.dilation = r;
    Taped t;
    auto got = t.val(adaptive_conv_apply(t, t.leaf(x), t.leaf(x2), spec));
    Tensor4d w(2, 1, 3, 3);
    for (int ch = 0; ch < 2; ++ch)
      for (int q = 0; q < 9; ++q) w.at(ch, 0, q / 3, q % 3) = kern.data[q];
    Taped t2;
    auto want = t2.val(conv2d(t2, t2.leaf(x), t2.leaf(w), -1, ConvSpec::same(2, 2, 3, r, 2)));
    double d = max_abs_diff(got, want);
    c.expect(d <= 1e-12, "r=" + std::to_string(r) + " diff " + std::to_string(d));
  }
}

// ---------------------------------------------------------------------------
// Criterion 4: evaluation protocol vs an independent brute-force oracle.
// The oracle below is written against the protocol description: explicit
// loops, max-scan interpolation, no envelope precomputation.
// ---------------------------------------------------------------------------
namespace oracle {

double ap101(std::vector<std::pair<double, char>> sf, int num_gt) {
  if (num_gt == 0) return std::numeric_limits<double>::quiet_NaN();
  std::stable_sort(sf.begin(), sf.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  size_t n = sf.size();
  std::vector<double> prec(n), rec(n);
  int tp = 0;
  for (size_t i = 0; i < n; ++i) {
    if (sf[i].second) ++tp;
    prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    rec[i] = static_cast<double>(tp) / num_gt;
  }
  double total = 0;
  for (int k = 0; k <= 100; ++k) {
    double r = k / 100.0;
    double best = -1;
    for (size_t i = 0; i < n; ++i)
      if (rec[i] >= r && prec[i] > best) best = prec[i];
    if (best >= 0) total += best;
  }
  return total / 101.0;
}

std::vector<Detection> cap100(const std::vector<Detection>& dets) {
  std::vector<Detection> out;
  std::set<int> images;
  for (const auto& d : dets) images.insert(d.image_id);
  std::vector<char> keep(dets.size(), 0);
  for (int img : images) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < dets.size(); ++i)
      if (dets[i].image_id == img) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
    for (size_t k = 0; k < idx.size() && k < 100; ++k) keep[idx[k]] = 1;
  }
  for (size_t i = 0; i < dets.size(); ++i)
    if (keep[i]) out.push_back(dets[i]);
  return out;
}

bool area_in(double area, Stratum s) {
  if (s == Stratum::All) return true;
  if (s == Stratum::Small) return area < 32.0 * 32.0;
  if (s == Stratum::Medium) return area >= 32.0 * 32.0 && area <= 96.0 * 96.0;
  return area > 96.0 * 96.0;
}

double class_ap(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                int cls, Stratum stratum, double th) {
  int num_gt = 0;
  for (const auto& g : gts)
    if (g.class_id == cls && area_in(g.area(), stratum)) ++num_gt;
  if (num_gt == 0) return std::numeric_limits<double>::quiet_NaN();

  std::vector<size_t> didx;
  for (size_t i = 0; i < dets.size(); ++i)
    if (dets[i].class_id == cls) didx.push_back(i);
  std::stable_sort(didx.begin(), didx.end(),
                   [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });

  std::vector<char> used(gts.size(), 0);
  std::vector<std::pair<double, char>> sf;
  for (size_t di : didx) {
    const Detection& d = dets[di];
    int pick = -1;
    double pick_iou = -1;
    for (size_t g = 0; g < gts.size(); ++g)
      if (!used[g] && gts[g].class_id == cls && gts[g].image_id == d.image_id &&
          area_in(gts[g].area(), stratum)) {
        double v = iou(d.box, gts[g].box);
        if (v >= th && v > pick_iou && v > 0) {
          pick_iou = v;
          pick = static_cast<int>(g);
        }
      }
    if (pick >= 0) {
      used[pick] = 1;
      sf.emplace_back(d.score, 1);
      continue;
    }
    for (size_t g = 0; g < gts.size(); ++g)
      if (!used[g] && gts[g].class_id == cls && gts[g].image_id == d.image_id &&
          !area_in(gts[g].area(), stratum)) {
        double v = iou(d.box, gts[g].box);
        if (v >= th && v > pick_iou && v > 0) {
          pick_iou = v;
          pick = static_cast<int>(g);
        }
      }
    if (pick >= 0) {
      used[pick] = 1;  // matched an ignored GT: detection dropped
    } else {
      sf.emplace_back(d.score, 0);
    }
  }
  return ap101(std::move(sf), num_gt);
}

double stratum_ap(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                  Stratum stratum, const std::vector<double>& thresholds) {
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  double total = 0;
  int cnt = 0;
  for (double th : thresholds) {
    double s = 0;
    int c = 0;
    for (int cls : classes) {
      double ap = class_ap(dets, gts, cls, stratum, th);
      if (!std::isnan(ap)) {
        s += ap;
        ++c;
      }
    }
    if (c > 0) {
      total += s / c;
      ++cnt;
    }
  }
  if (cnt == 0) return std::numeric_limits<double>::quiet_NaN();
  return total / cnt;
}

EvalResult evaluate(const std::vector<Detection>& dets_in,
                    const std::vector<GroundTruthBox>& gts) {
  std::vector<Detection> dets = cap100(dets_in);
  std::vector<double> all;
  for (int i = 0; i < 10; ++i) all.push_back(0.50 + 0.05 * i);
  EvalResult r;
  r.ap = stratum_ap(dets, gts, Stratum::All, all);
  r.ap50 = stratum_ap(dets, gts, Stratum::All, {0.50});
  r.ap75 = stratum_ap(dets, gts, Stratum::All, {0.75});
  r.ap_s = stratum_ap(dets, gts, Stratum::Small, all);
  r.ap_m = stratum_ap(dets, gts, Stratum::Medium, all);
  r.ap_l = stratum_ap(dets, gts, Stratum::Large, all);
  return r;
}

}  // namespace oracle

bool same_metric(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

void criterion_eval_oracle(Criterion& c) {
  // hand values
  double hand_iou = iou(Box{0, 0, 2, 2}, Box{1, 1, 2, 2});
  c.expect(hand_iou == 1.0 / 7.0, "IoU((0,0,2,2),(1,1,2,2)) != 1/7");
  double hand_ap = average_precision({{0.9, 1}, {0.8, 0}}, 2);
  c.expect(hand_ap == 51.0 / 101.0 && std::fabs(hand_ap - 0.5) < 0.01,
           "AP([TP,FP], 2 GT) != 0.5 under the 101-point rule");

  // 200 randomized tiny instances, bit-equal across all six metrics
  SplitMix64 rng(61);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> dets;
    std::vector<GroundTruthBox> gts;
    int n_img = 1 + static_cast<int>(rng.next_below(5));
    int n_cls = 1 + static_cast<int>(rng.next_below(3));
    int n_gt = static_cast<int>(rng.next_below(7));
    for (int i = 0; i < n_gt; ++i) {
      double w, h;
      switch (rng.next_below(3)) {
        case 0: w = 2 + 28 * rng.uniform(0, 1), h = 2 + 28 * rng.uniform(0, 1); break;
        case 1: w = 33 + 50 * rng.uniform(0, 1), h = 33 + 50 * rng.uniform(0, 1); break;
        default: w = 97 + 60 * rng.uniform(0, 1), h = 97 + 60 * rng.uniform(0, 1); break;
      }
      GroundTruthBox g;
      g.image_id = static_cast<int>(rng.next_below(n_img));
      g.box = Box{200 * rng.uniform(0, 1), 200 * rng.uniform(0, 1), w, h};
      g.class_id = static_cast<int>(rng.next_below(n_cls));
      gts.push_back(g);
    }
    int n_det = static_cast<int>(rng.next_below(9));
    for (int i = 0; i < n_det; ++i) {
      Detection d;
      if (!gts.empty() && rng.next_below(10) < 7) {
        const GroundTruthBox& g = gts[rng.next_below(gts.size())];
        d.image_id = g.image_id;
        d.box = Box{g.box.x + 6 * rng.uniform(-1, 1), g.box.y + 6 * rng.uniform(-1, 1),
                    std::max(1.0, g.box.w + 6 * rng.uniform(-1, 1)),
                    std::max(1.0, g.box.h + 6 * rng.uniform(-1, 1))};
        d.class_id =
            rng.next_below(5) == 0 ? static_cast<int>(rng.next_below(n_cls)) : g.class_id;
      } else {
        d.image_id = static_cast<int>(rng.next_below(n_img));
        d.box = Box{200 * rng.uniform(0, 1), 200 * rng.uniform(0, 1),
                    1 + 120 * rng.uniform(0, 1), 1 + 120 * rng.uniform(0, 1)};
        d.class_id = static_cast<int>(rng.next_below(n_cls));
      }
      d.score = rng.next_below(2) == 0 ? (1 + rng.next_below(9)) / 10.0
                                       : rng.uniform(0.05, 1.0);
      dets.push_back(d);
    }

    EvalResult got = evaluate(dets, gts);
    EvalResult want = oracle::evaluate(dets, gts);
    if (!(same_metric(got.ap, want.ap) && same_metric(got.ap50, want.ap50) &&
          same_metric(got.ap75, want.ap75) && same_metric(got.ap_s, want.ap_s) &&
          same_metric(got.ap_m, want.ap_m) && same_metric(got.ap_l, want.ap_l)))
      ++mismatches;
  }
  c.expect(mismatches == 0,
           std::to_string(mismatches) + "/200 instances disagree with the oracle");
}

// ---------------------------------------------------------------------------
// Criteria 5 + 6: shared training recipe.
// ---------------------------------------------------------------------------
RunConfig overfit_recipe() {
  RunConfig cfg;
  cfg.learning_rate = 0.10;
  cfg.momentum = 0.9;
  cfg.iterations = 800;
  cfg.seed = 42;
  cfg.scene_count = 8;
  cfg.scene.seed = 1000;
  cfg.scene.num_objects = 5;
  cfg.scene.num_clusters = 5;
  cfg.scene.cluster_spread = 14;
  cfg.score_thresh = 0.05;
  cfg.nms_iou = 0.5;
  return cfg;
}

struct RunOutcome {
  bool numeric_ok = true;
  bool monotone50 = true;
  double initial_loss = 0, final_loss = 0;
  double ap50 = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0;
};

RunOutcome run_recipe(const RunConfig& cfg) {
  RunOutcome out;
  double t0 = now_s();
  auto items = config_dataset(cfg);
  try {
    auto r = train_model<double>(cfg, items);
    out.initial_loss = static_cast<double>(r.rows.front().total);
    out.final_loss = static_cast<double>(r.rows.back().total);
    for (size_t i = 1; i < r.rows.size() && i < 50; ++i)
      if (r.rows[i].total >= r.rows[i - 1].total) out.monotone50 = false;
    for (const auto& row : r.rows)
      if (!std::isfinite(static_cast<double>(row.total))) out.numeric_ok = false;
    EvalResult e = evaluate_model(cfg, r.state.params, items);
    out.ap50 = e.ap50;
  } catch (const NumericError&) {
    out.numeric_ok = false;
  }
  out.seconds = now_s() - t0;
  return out;
}

void criterion_overfit(Criterion& c, double& baseline_ap50) {
  RunConfig cfg = overfit_recipe();
  RunOutcome r = run_recipe(cfg);
  baseline_ap50 = r.ap50;
  c.expect(r.numeric_ok, "training hit a non-finite loss");
  c.expect(r.ap50 >= 0.9, "AP50 " + std::to_string(r.ap50) + " < 0.9");
  c.expect(r.final_loss < 0.1 * r.initial_loss,
           "final loss " + std::to_string(r.final_loss) + " not < 10% of initial " +
               std::to_string(r.initial_loss));
  c.expect(r.seconds < 600.0, "runtime " + std::to_string(r.seconds) + "s >= 600s");
  char buf[96];
  std::snprintf(buf, sizeof(buf), "AP50=%.3f loss %.3f->%.4f in %.0fs", r.ap50, r.initial_loss,
                r.final_loss, r.seconds);
  c.note(buf);
}

void criterion_ablation(Criterion& c, double baseline_ap50) {
  struct Flags {
    const char* name;
    bool slpa, msfem, align;
  };
  const Flags combos[4] = {{"slpa", true, false, false},
                           {"msfem", false, true, false},
                           {"align", false, false, true},
                           {"all", true, true, true}};
  for (const auto& f : combos) {
    RunConfig cfg = overfit_recipe();
    cfg.model.use_slpa = f.slpa;
    cfg.model.use_msfem = f.msfem;
    cfg.model.use_align = f.align;
    RunOutcome r = run_recipe(cfg);
    std::string tag(f.name);
    c.expect(r.numeric_ok, tag + ": non-finite loss");
    c.expect(r.monotone50, tag + ": loss not monotone over the first 50 steps");
    c.expect(r.ap50 >= baseline_ap50 - 0.05,
             tag + ": AP50 " + std::to_string(r.ap50) + " < baseline " +
                 std::to_string(baseline_ap50) + " - 0.05");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s AP50=%.3f (%.0fs)", f.name, r.ap50, r.seconds);
    c.note(buf);
  }
}

// ---------------------------------------------------------------------------
// Criterion 7: determinism and persistence.
// ---------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void criterion_determinism(Criterion& c) {
  RunConfig cfg;
  cfg.model.stem_width = 4;
  cfg.model.widths = {4, 8, 8, 8};
  cfg.model.pyramid_width = 8;
  cfg.learning_rate = 0.01;
  cfg.iterations = 24;
  cfg.seed = 13;
  cfg.scene.height = 32;
  cfg.scene.width = 32;
  cfg.scene.num_objects = 3;
  cfg.scene.size_max = 8;
  cfg.scene.seed = 200;
  cfg.scene_count = 2;
  auto items = config_dataset(cfg);

  fs::path base = fs::temp_directory_path() / "sodm_acceptance";
  fs::remove_all(base);
  fs::create_directories(base);

  // two runs, bit-identical loss logs and parameters
  auto a = train_model<double>(cfg, items, base / "a");
  auto b = train_model<double>(cfg, items, base / "b");
  c.expect(slurp(base / "a" / "loss_log.csv") == slurp(base / "b" / "loss_log.csv"),
           "repeated runs produced different loss logs");
  bool params_equal = a.state.params.entries().size() == b.state.params.entries().size();
  for (size_t i = 0; params_equal && i < a.state.params.entries().size(); ++i)
    params_equal = a.state.params.entries()[i].tensor.data ==
                   b.state.params.entries()[i].tensor.data;
  c.expect(params_equal, "repeated runs produced different parameters");

  // checkpoint round trip is bit-exact, optimizer state included
  save_train_checkpoint(a.state, base / "ck.sodm");
  auto loaded = load_train_checkpoint<double>(cfg, base / "ck.sodm");
  bool rt = loaded.iteration == a.state.iteration;
  for (size_t i = 0; rt && i < a.state.params.entries().size(); ++i)
    rt = loaded.params.entries()[i].tensor.data == a.state.params.entries()[i].tensor.data;
  for (size_t i = 0; rt && i < a.state.velocity.entries().size(); ++i)
    rt = loaded.velocity.entries()[i].tensor.data == a.state.velocity.entries()[i].tensor.data;
  c.expect(rt, "checkpoint round trip is not bit-exact");

  // interrupted + resumed equals uninterrupted
  train_model<double>(cfg, items, base / "part", {}, 8, /*stop_after=*/11);
  auto resumed = train_model<double>(cfg, items, base / "part", base / "part" / "checkpoint.sodm", 8);
  c.expect(slurp(base / "a" / "loss_log.csv") == slurp(base / "part" / "loss_log.csv"),
           "resumed loss log differs from the uninterrupted run");
  bool resume_equal = resumed.state.iteration == a.state.iteration;
  for (size_t i = 0; resume_equal && i < a.state.params.entries().size(); ++i)
    resume_equal = resumed.state.params.entries()[i].tensor.data ==
                   a.state.params.entries()[i].tensor.data;
  c.expect(resume_equal, "resumed parameters differ from the uninterrupted run");
  fs::remove_all(base);
}

// ---------------------------------------------------------------------------
// Criterion 8: dilation-rate contracts and alternative configurations.
// ---------------------------------------------------------------------------
void criterion_dilation_contract(Criterion& c) {
  {
    SlpaConfig bad;
    bad.dilation_rates = {1, 2};
    bool threw = false;
    try {
      bad.validate();
    } catch (const ConfigError&) {
      threw = true;
    }
    c.expect(threw, "SLPA accepted 2 dilation rates");
    bad.dilation_rates = {1, 2, 3, 4};
    threw = false;
    try {
      bad.validate();
    } catch (const ConfigError&) {
      threw = true;
    }
    c.expect(threw, "SLPA accepted 4 dilation rates");
    SlpaConfig def;
    c.expect(def.dilation_rates == std::vector<int>{1, 2, 3}, "SLPA default rates != {1,2,3}");
  }
  {
    MsfemConfig bad;
    bad.in_channels = 8;
    bad.out_channels = 4;
    bad.dilation_rates = {1, 2, 3};
    bool threw = false;
    try {
      bad.validate();
    } catch (const ConfigError&) {
      threw = true;
    }
    c.expect(threw, "MSFEM accepted 3 dilation rates");
    MsfemConfig def;
    c.expect(def.dilation_rates == std::vector<int>{1, 2, 3, 4},
             "MSFEM default rates != {1,2,3,4}");
  }

  // alternative rate sets: construct, run, check shapes
  for (auto rates : {std::vector<int>{1, 2, 3}, {1, 2, 4}, {1, 2, 5}, {1, 3, 5}, {1, 3, 6},
                     {1, 3, 9}}) {
    SlpaConfig cfg;
    cfg.dilation_rates = rates;
    Paramsd params;
    SplitMix64 rng(5);
    add_slpa_params(params, "s", cfg, rng);
    Taped t;
    TapedParams<double> tp(t, params);
    SplitMix64 rng2(6);
    auto x = Tensor4d::random_uniform(1, 4, 8, 8, rng2, -1.0, 1.0);
    auto out = slpa_forward(t, t.leaf(x), cfg, tp, "s");
    c.expect(t.val(out.rescaled).same_dims(x), "SLPA alternative rates changed output shape");
  }
  for (auto rates : {std::vector<int>{1, 2, 3, 4}, {1, 2, 3, 5}, {1, 2, 4, 6}, {1, 3, 5, 7}}) {
    MsfemConfig cfg;
    cfg.in_channels = 8;
    cfg.out_channels = 8;
    cfg.dilation_rates = rates;
    Paramsd params;
    SplitMix64 rng(7);
    add_msfem_params(params, "m", cfg, rng);
    Taped t;
    TapedParams<double> tp(t, params);
    SplitMix64 rng2(8);
    auto x = Tensor4d::random_uniform(1, 8, 8, 8, rng2, -1.0, 1.0);
    int out = msfem_forward(t, t.leaf(x), cfg, tp, "m", false);
    const auto& ov = t.val(out);
    c.expect(ov.n == 1 && ov.c == 8 && ov.h == 8 && ov.w == 8,
             "MSFEM alternative rates changed output shape");
  }
}

}  // namespace

int main() {
  setenv("SODM_THREADS", "1", 1);
  std::vector<Criterion> results;
  double baseline_ap50 = std::numeric_limits<double>::quiet_NaN();

  auto run = [&](int number, const std::string& name, auto&& fn) {
    Criterion c;
    c.number = number;
    c.name = name;
    fn(c);
    std::printf("criterion %d [%s]: %s%s%s\n", c.number, c.name.c_str(),
                c.pass ? "PASS" : "FAIL", c.detail.empty() ? "" : " — ", c.detail.c_str());
    std::fflush(stdout);
    results.push_back(std::move(c));
  };

  run(1, "gradient suite", [&](Criterion& c) { criterion_gradients(c); });
  run(2, "degenerate equivalences", [&](Criterion& c) { criterion_degenerate(c); });
  run(3, "constant-kernel bridge", [&](Criterion& c) { criterion_constant_kernels(c); });
  run(4, "evaluation oracle", [&](Criterion& c) { criterion_eval_oracle(c); });
  run(5, "end-to-end overfit", [&](Criterion& c) { criterion_overfit(c, baseline_ap50); });
  run(6, "ablation trainability", [&](Criterion& c) { criterion_ablation(c, baseline_ap50); });
  run(7, "determinism & persistence", [&](Criterion& c) { criterion_determinism(c); });
  run(8, "dilation-config contract", [&](Criterion& c) { criterion_dilation_contract(c); });

  int failures = 0;
  for (const auto& c : results)
    if (!c.pass) ++failures;
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
