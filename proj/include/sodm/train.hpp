#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sodm/checkpoint.hpp"
#include "sodm/config.hpp"
#include "sodm/eval.hpp"
#include "sodm/model.hpp"

namespace sodm {

// Full-batch SGD with momentum and a two-step decay schedule (x0.1 at 2/3
// and 5/6 of the iteration budget). The optimizer state (velocity buffers,
// iteration counter) lives inside the checkpoint so a resumed run continues
// bit-exactly.

template <class T>
Tensor4<T> stack_images(const std::vector<DatasetItem>& items) {
  if (items.empty()) throw ConfigError("training needs at least one image");
  int h = items[0].image.h, w = items[0].image.w;
  Tensor4<T> batch(static_cast<int>(items.size()), 3, h, w);
  for (size_t i = 0; i < items.size(); ++i) {
    if (items[i].image.h != h || items[i].image.w != w || items[i].image.c != 3)
      throw ShapeError("image " + std::to_string(i) + " is " + items[i].image.shape_str() +
                       ", expected 1x3x" + std::to_string(h) + "x" + std::to_string(w));
    for (size_t j = 0; j < items[i].image.numel(); ++j)
      batch.data[i * items[i].image.numel() + j] = static_cast<T>(items[i].image.data[j]);
  }
  return batch;
}

inline std::vector<GroundTruthBox> gather_gts(const std::vector<DatasetItem>& items) {
  std::vector<GroundTruthBox> gts;
  for (size_t i = 0; i < items.size(); ++i)
    for (GroundTruthBox g : items[i].gts) {
      g.image_id = static_cast<int>(i);
      gts.push_back(g);
    }
  return gts;
}

inline constexpr int kWarmupIters = 100;

// Global gradient-norm clip. Typical full-batch gradient norms here are well
// under 1; occasional spikes of 10-100x (deformable offsets crossing cell
// boundaries) compound through momentum and can blow up the run.
inline constexpr double kGradClipNorm = 2.0;

inline double lr_at(double base, int iter, int total_iters) {
  double lr = base;
  if (iter < kWarmupIters) {
    double f = static_cast<double>(iter + 1) / kWarmupIters;
    lr *= f * f;  // quadratic ramp keeps early momentum-driven steps monotone
  }
  if (total_iters > 0 && iter >= 2 * total_iters / 3) lr *= 0.1;
  if (total_iters > 0 && iter >= 5 * total_iters / 6) lr *= 0.1;
  return lr;
}

// Combined skeleton: model parameters plus optimizer state, the unit a
// checkpoint file stores.
template <class T>
struct TrainState {
  Params<T> params;
  Params<T> velocity;      // one zero-shaped buffer per learnable parameter
  long iteration = 0;
};

template <class T>
TrainState<T> init_train_state(const RunConfig& cfg) {
  TrainState<T> st;
  st.params = init_model_params<T>(cfg.model, cfg.seed);
  for (const auto& e : st.params.entries())
    if (e.learnable)
      st.velocity.add(e.name, Tensor4<T>(e.tensor.n, e.tensor.c, e.tensor.h, e.tensor.w));
  return st;
}

template <class T>
Params<T> pack_train_state(const TrainState<T>& st) {
  Params<T> all;
  for (const auto& e : st.params.entries()) all.add(e.name, e.tensor, e.learnable);
  for (const auto& e : st.velocity.entries()) all.add("opt.velocity." + e.name, e.tensor, false);
  all.add("opt.iteration", Tensor4<T>(1, 1, 1, 1, static_cast<T>(st.iteration)), false);
  return all;
}

template <class T>
void save_train_checkpoint(const TrainState<T>& st, const std::filesystem::path& path) {
  save_checkpoint(pack_train_state(st), path);
}

template <class T>
TrainState<T> load_train_checkpoint(const RunConfig& cfg, const std::filesystem::path& path) {
  TrainState<T> st = init_train_state<T>(cfg);
  Params<T> all = pack_train_state(st);
  load_checkpoint(all, path);
  for (auto& e : st.params.entries()) e.tensor = all.at(e.name);
  for (auto& e : st.velocity.entries()) e.tensor = all.at("opt.velocity." + e.name);
  st.iteration = static_cast<long>(all.at("opt.iteration").data[0]);
  return st;
}

template <class T>
struct TrainRow {
  long iteration;
  T total, cls, box;
};

template <class T>
struct TrainResult {
  TrainState<T> state;
  std::vector<TrainRow<T>> rows;  // rows produced by this call only
};

inline std::string format_loss_row(long iteration, double total, double cls, double box) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%ld,%.10e,%.10e,%.10e", iteration, total, cls, box);
  return buf;
}

// Runs (or resumes) training. When `out_dir` is non-empty, appends to
// loss_log.csv and writes checkpoint.sodm every `checkpoint_every`
// iterations and at the end. A non-finite loss aborts with the iteration
// number; the last written checkpoint stays on disk.
// `stop_after` (when >= 0) interrupts the run at that absolute iteration while
// keeping the learning-rate schedule of the full budget, so a later resume
// continues bit-exactly.
template <class T>
TrainResult<T> train_model(const RunConfig& cfg, const std::vector<DatasetItem>& items,
                           const std::filesystem::path& out_dir = {},
                           const std::filesystem::path& resume_from = {},
                           int checkpoint_every = 200, long stop_after = -1) {
  cfg.validate();
  TrainResult<T> result;
  result.state = resume_from.empty() ? init_train_state<T>(cfg)
                                     : load_train_checkpoint<T>(cfg, resume_from);
  TrainState<T>& st = result.state;

  Tensor4<T> batch = stack_images<T>(items);
  std::vector<GroundTruthBox> gts = gather_gts(items);
  auto targets = encode_targets<T>(gts, batch.n, batch.h, batch.w, cfg.model.num_classes);

  std::ofstream log;
  std::filesystem::path ckpt_path;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::filesystem::path log_path = out_dir / "loss_log.csv";
    bool fresh = !std::filesystem::exists(log_path);
    log.open(log_path, std::ios::app);
    if (!log) throw IoError("cannot open " + log_path.string());
    if (fresh) log << "iteration,total,class,box\n";
    ckpt_path = out_dir / "checkpoint.sodm";
  }

  long stop = stop_after >= 0 ? std::min<long>(stop_after, cfg.iterations) : cfg.iterations;
  for (long t = st.iteration; t < stop; ++t) {
    Tape<T> tape;
    TapedParams<T> tp(tape, st.params);
    int image = tape.leaf(batch);
    DetectionLoss<T> loss;
    try {
      HeadOutputs head = model_forward(tape, image, cfg.model, tp, /*train=*/true);
      loss = detection_loss(tape, head, targets);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (training iteration " + std::to_string(t + 1) +
                         "; last-good checkpoint retained)");
    }
    if (!std::isfinite(static_cast<double>(loss.total)))
      throw NumericError("non-finite loss at training iteration " + std::to_string(t + 1) +
                         "; last-good checkpoint retained");

    std::vector<std::pair<std::string, int>> learnables = tp.learnable_ids();
    std::vector<int> leaf_ids;
    for (const auto& [name, id] : learnables) leaf_ids.push_back(id);
    Tensor4<T> seed(1, 1, 1, 1, T(1));
    auto grads = tape.backward(loss.id, seed, leaf_ids);

    double grad_norm2 = 0;
    for (const auto& [name, id] : learnables)
      for (T g : grads.at(id).data) grad_norm2 += static_cast<double>(g) * static_cast<double>(g);
    T clip_scale = T(1);
    if (grad_norm2 > kGradClipNorm * kGradClipNorm)
      clip_scale = static_cast<T>(kGradClipNorm / std::sqrt(grad_norm2));

    T lr = static_cast<T>(lr_at(cfg.learning_rate, static_cast<int>(t), cfg.iterations));
    // momentum ramps with the warmup so early velocity cannot overshoot
    double mu_scale =
        t < kWarmupIters ? static_cast<double>(t + 1) / kWarmupIters : 1.0;
    T mu = static_cast<T>(cfg.momentum * mu_scale);
    for (const auto& [name, id] : learnables) {
      Tensor4<T>& w = st.params.at(name);
      Tensor4<T>& v = st.velocity.at(name);
      const Tensor4<T>& g = grads.at(id);
      for (size_t i = 0; i < w.numel(); ++i) {
        v.data[i] = mu * v.data[i] + clip_scale * g.data[i];
        w.data[i] -= lr * v.data[i];
      }
    }

    st.iteration = t + 1;
    result.rows.push_back(TrainRow<T>{t + 1, loss.total, loss.cls, loss.box});
    if (log.is_open()) {
      log << format_loss_row(t + 1, static_cast<double>(loss.total),
                             static_cast<double>(loss.cls), static_cast<double>(loss.box))
          << "\n";
      log.flush();
    }
    if (!ckpt_path.empty() && ((t + 1) % checkpoint_every == 0 || t + 1 == stop))
      save_train_checkpoint(st, ckpt_path);
  }
  if (!ckpt_path.empty() && st.iteration == 0) save_train_checkpoint(st, ckpt_path);
  return result;
}

// Eval-mode detection over a dataset; detection image_ids are dataset indices.
template <class T>
std::vector<Detection> run_detector(const ModelConfig& model, Params<T>& params,
                                    const std::vector<DatasetItem>& items, double score_thresh,
                                    double nms_iou) {
  std::vector<Detection> all;
  for (size_t i = 0; i < items.size(); ++i) {
    Tensor4<T> img = items[i].image.template cast<T>();
    std::array<Tensor4<T>, 4> cls, box;
    model_predict(img, model, params, cls, box);
    for (Detection d : decode_detections(cls, box, score_thresh, nms_iou)) {
      d.image_id = static_cast<int>(i);
      all.push_back(d);
    }
  }
  return all;
}

template <class T>
EvalResult evaluate_model(const RunConfig& cfg, Params<T>& params,
                          const std::vector<DatasetItem>& items) {
  std::vector<Detection> dets =
      run_detector(cfg.model, params, items, cfg.score_thresh, cfg.nms_iou);
  return evaluate(dets, gather_gts(items));
}

}  // namespace sodm
