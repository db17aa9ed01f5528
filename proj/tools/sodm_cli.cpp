// sodm: command-line driver for the small-object detection library.
// Subcommands: gradcheck, synth, train, eval, bench.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "sodm/config.hpp"
#include "sodm/gradcheck.hpp"
#include "sodm/model.hpp"
#include "sodm/synth.hpp"
#include "sodm/train.hpp"

using namespace sodm;
namespace fs = std::filesystem;

namespace {

int read_thread_cap() {
  const char* env = std::getenv("SODM_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  if (n < 1) throw ConfigError("SODM_THREADS must be a positive integer, got '" +
                               std::string(env) + "'");
  return n;  // kernels are single-threaded; the cap is honored trivially
}

// ---- gradcheck ------------------------------------------------------------

struct NamedCheck {
  std::string module;
  std::string op;
  std::function<GradCheckReport(uint64_t, double)> run;
};

std::vector<NamedCheck> build_checks() {
  using namespace sodm::ops;
  std::vector<NamedCheck> checks;
  auto reg = [&](std::string module, std::string op,
                 std::function<GradCheckReport(uint64_t, double)> f) {
    checks.push_back({std::move(module), std::move(op), std::move(f)});
  };

  reg("tensor", "conv2d", [](uint64_t seed, double tol) {
    SplitMix64 rng(seed);
    auto x = Tensor4d::random_uniform(2, 3, 6, 6, rng, -1.0, 1.0);
    auto w = Tensor4d::random_uniform(4, 3, 3, 3, rng, -0.5, 0.5);
    auto b = Tensor4d::random_uniform(1, 4, 1, 1, rng, -0.5, 0.5);
    return finite_diff_check(
        [](Taped& t, const std::vector<int>& ids) {
          return conv2d(t, ids[0], ids[1], ids[2], ConvSpec::same(3, 4, 3));
        },
        {x, w, b}, 1e-5, tol);
  });
  reg("tensor", "batch_norm", [](uint64_t seed, double tol) {
    SplitMix64 rng(seed);
    auto x = Tensor4d::random_uniform(2, 3, 4, 4, rng, -1.0, 1.0);
    auto gamma = Tensor4d::random_uniform(1, 3, 1, 1, rng, 0.5, 1.5);
    auto beta = Tensor4d::random_uniform(1, 3, 1, 1, rng, -0.5, 0.5);
    return finite_diff_check(
        [](Taped& t, const std::vector<int>& ids) {
          Tensor4d rm(1, 3, 1, 1), rv = Tensor4d::full(1, 3, 1, 1, 1.0);
          return batch_norm(t, ids[0], ids[1], ids[2], rm, rv, true);
        },
        {x, gamma, beta}, 1e-5, tol);
  });
  reg("tensor", "pool_channel", [](uint64_t seed, double tol) {
    SplitMix64 rng(seed);
    auto x = Tensor4d::random_uniform(2, 4, 5, 5, rng, -1.0, 1.0);
    return finite_diff_check(
        [](Taped& t, const std::vector<int>& ids) {
          int mx = pool_channel(t, ids[0], PoolMode::Max);
          int av = pool_channel(t, ids[0], PoolMode::Avg);
          return concat_channels(t, {mx, av});
        },
        {x}, 1e-5, tol);
  });
  reg("tensor", "activations", [](uint64_t seed, double tol) {
    SplitMix64 rng(seed);
    auto x = Tensor4d::random_uniform(2, 3, 4, 4, rng, -1.0, 1.0);
    for (auto& v : x.data)
      if (std::abs(v) < 0.05) v += 0.1;  // keep clear of the ReLU kink
    return finite_diff_check(
        [](Taped& t, const std::vector<int>& ids) {
          int a = activation(t, ids[0], Activation::Relu);
          int b = activation(t, ids[0], Activation::LeakyRelu);
          int c = activation(t, ids[0], Activation::Sigmoid);
          return concat_channels(t, {a, b, c});
        },
        {x}, 1e-5, tol);
  });
  reg("tensor", "softmax", [](uint64_t seed, double tol) {
    SplitMix64 rng(seed);
    auto x = Tensor4d::random_uniform(2, 6, 3, 3, rng, -2.0, 2.0);
    return finite_diff_check(
        [](Taped& t, const std::vector<int>& ids) { return softmax_channel(t, ids[0], 2); }, {x},
        1e-5, tol);
  });
  reg("tensor", "upsample", [](uint64_t seed, double tol) {
    SplitMix64 rng(seed);
    auto x = Tensor4d::random_uniform(1, 3, 3, 3, rng, -1.0, 1.0);
    return finite_diff_check(
        [](Taped& t, const std::vector<int>& ids) {
          int a = upsample(t, ids[0], 6, 6, UpsampleMode::Nearest);
          int b = upsample(t, ids[0], 6, 6, UpsampleMode::Bilinear);
          return add(t, a, b);
        },
        {x}, 1e-5, tol);
  });
  reg("tensor", "unfold", [](uint64_t seed, double tol) {
    SplitMix64 rng(seed);
    auto x = Tensor4d::random_uniform(1, 2, 5, 5, rng, -1.0, 1.0);
    return finite_diff_check(
        [](Taped& t, const std::vector<int>& ids) { return unfold_dilated(t, ids[0], 3, 2); }, {x},
        1e-5, tol);
  });

  reg("slpa", "slpa_forward", [](uint64_t seed, double tol) {
    SlpaConfig cfg;
    Paramsd params;
    SplitMix64 rng(seed);
    add_slpa_params(params, "slpa", cfg, rng);
    for (auto& v : params.at("slpa.fuse.w").data) v = rng.uniform(-0.3, 0.3);
    auto x = Tensor4d::random_uniform(1, 4, 6, 6, rng, -1.0, 1.0);
    return module_gradcheck(
        params, {x},
        [&](Taped& t, const std::vector<int>& ids, TapedParams<double>& tp) {
          return slpa_forward(t, ids[0], cfg, tp, "slpa").rescaled;
        },
        1e-5, tol);
  });

  reg("msfem", "adaptive_conv", [](uint64_t seed, double tol) {
    AdaptiveConvSpec spec;
    spec.dilation = 2;
    spec.in_channels = 2;
    Paramsd params;
    SplitMix64 rng(seed);
    add_adaptive_conv_params(params, "ac", spec, rng);
    // soft logits keep every softmax branch active, away from the FD noise floor
    for (auto& v : params.at("ac.compress.w").data) v *= 0.2;
    auto x = Tensor4d::random_uniform(1, 2, 5, 5, rng, 0.2, 1.2);
    return module_gradcheck(
        params, {x},
        [&](Taped& t, const std::vector<int>& ids, TapedParams<double>& tp) {
          int k = adaptive_kernel_predict(t, ids[0], spec, tp, "ac", false);
          return adaptive_conv_apply(t, ids[0], k, spec);
        },
        1e-5, tol);
  });
  reg("msfem", "msfem_forward", [](uint64_t seed, double tol) {
    MsfemConfig cfg;
    cfg.in_channels = 4;
    cfg.out_channels = 3;
    Paramsd params;
    SplitMix64 rng(seed);
    add_msfem_params(params, "ms", cfg, rng);
    for (auto& e : params.entries())
      if (e.name.find("compress.w") != std::string::npos)
        for (auto& v : e.tensor.data) v *= 0.5;
    auto x = Tensor4d::random_uniform(1, 4, 5, 5, rng, 0.2, 1.2);
    return module_gradcheck(
        params, {x},
        [&](Taped& t, const std::vector<int>& ids, TapedParams<double>& tp) {
          return msfem_forward(t, ids[0], cfg, tp, "ms", false);
        },
        1e-5, tol);
  });

  reg("deform", "deform_conv2d", [](uint64_t seed, double tol) {
    SplitMix64 rng(seed);
    auto x = Tensor4d::random_uniform(1, 2, 6, 6, rng, -1.0, 1.0);
    auto w = Tensor4d::random_uniform(2, 2, 3, 3, rng, -0.5, 0.5);
    auto b = Tensor4d::random_uniform(1, 2, 1, 1, rng, -0.5, 0.5);
    Tensor4d off(1, 18, 6, 6);
    for (auto& v : off.data) v = 0.3 + 0.2 * rng.uniform(-1.0, 1.0);
    return finite_diff_check(
        [](Taped& t, const std::vector<int>& ids) {
          return sodm::ops::deform_conv2d(t, ids[0], ids[1], ids[2], ids[3], 3, 1);
        },
        {x, off, w, b}, 1e-5, tol);
  });
  reg("deform", "align_fuse", [](uint64_t seed, double tol) {
    Paramsd params;
    SplitMix64 rng(seed);
    add_align_params<double>(params, "al", 2, rng);
    for (auto& v : params.at("al.offset.w").data) v = rng.uniform(-0.3, 0.3);
    for (auto& v : params.at("al.offset.b").data) v = 0.3;
    auto top = Tensor4d::random_uniform(1, 2, 3, 3, rng, -1.0, 1.0);
    auto lat = Tensor4d::random_uniform(1, 2, 6, 6, rng, -1.0, 1.0);
    return module_gradcheck(
        params, {top, lat},
        [&](Taped& t, const std::vector<int>& ids, TapedParams<double>& tp) {
          return align_fuse(t, ids[0], ids[1], tp, "al");
        },
        1e-5, tol);
  });

  reg("fpn", "build_pyramid", [](uint64_t seed, double tol) {
    PyramidConfig cfg;
    cfg.in_channels = {2, 2, 4, 4};
    cfg.width = 2;
    cfg.use_msfem = true;
    cfg.use_align = true;
    Paramsd params;
    SplitMix64 rng(seed);
    add_pyramid_params(params, "fpn", cfg, rng);
    for (auto& e : params.entries()) {
      if (e.learnable && e.name.find("offset") != std::string::npos)
        for (auto& v : e.tensor.data) v = rng.uniform(-0.3, 0.3);
      if (e.name.find("compress.w") != std::string::npos)
        for (auto& v : e.tensor.data) v *= 0.5;
    }
    std::vector<Tensor4d> feats{Tensor4d::random_uniform(1, 2, 16, 16, rng, -1.0, 1.0),
                                Tensor4d::random_uniform(1, 2, 8, 8, rng, -1.0, 1.0),
                                Tensor4d::random_uniform(1, 4, 4, 4, rng, -1.0, 1.0),
                                Tensor4d::random_uniform(1, 4, 2, 2, rng, 0.2, 1.2)};
    return module_gradcheck(
        params, feats,
        [&](Taped& t, const std::vector<int>& ids, TapedParams<double>& tp) {
          auto p = build_pyramid(t, {ids[0], ids[1], ids[2], ids[3]}, cfg, tp, "fpn", false);
          // flatten every level into channels so the harness seeds each element
          std::vector<int> flat;
          for (int i = 0; i < 4; ++i) {
            const auto& v = t.val(p[i]);
            int ne = static_cast<int>(v.numel());
            flat.push_back(sodm::ops::reshape(t, p[i], 1, ne, 1, 1));
          }
          return sodm::ops::concat_channels(t, flat);
        },
        1e-5, tol);
  });
  reg("fpn", "head_forward", [](uint64_t seed, double tol) {
    HeadConfig cfg;
    cfg.width = 2;
    cfg.num_classes = 2;
    Paramsd params;
    SplitMix64 rng(seed);
    add_head_params(params, "head", cfg, rng);
    for (auto& v : params.at("head.cls.w").data) v = rng.uniform(-0.3, 0.3);
    for (auto& v : params.at("head.box.w").data) v = rng.uniform(-0.3, 0.3);
    std::vector<Tensor4d> feats;
    int hw[4] = {6, 3, 2, 1};
    for (int i = 0; i < 4; ++i)
      feats.push_back(Tensor4d::random_uniform(1, 2, hw[i], hw[i], rng, -1.0, 1.0));
    return module_gradcheck(
        params, feats,
        [&](Taped& t, const std::vector<int>& ids, TapedParams<double>& tp) {
          auto out = head_forward(t, {ids[0], ids[1], ids[2], ids[3]}, cfg, tp, "head");
          std::vector<int> flat;
          for (int id : {out.cls[0], out.cls[1], out.cls[2], out.cls[3], out.box[0], out.box[1],
                         out.box[2], out.box[3]}) {
            const auto& v = t.val(id);
            int ne = static_cast<int>(v.numel());
            flat.push_back(sodm::ops::reshape(t, id, 1, ne, 1, 1));
          }
          return sodm::ops::concat_channels(t, flat);
        },
        1e-5, tol);
  });
  return checks;
}

int cmd_gradcheck(const std::string& module, uint64_t seed, double tol) {
  auto checks = build_checks();
  bool any = false, all_pass = true;
  std::printf("%-8s %-18s %-14s %-10s %s\n", "module", "op", "max_rel_err", "worst", "status");
  for (const auto& c : checks) {
    if (module != "all" && module != c.module) continue;
    any = true;
    GradCheckReport rep = c.run(seed, tol);
    std::printf("%-8s %-18s %-14.3e %d:%-8zu %s\n", c.module.c_str(), c.op.c_str(),
                rep.max_rel_err, rep.worst_leaf, rep.worst_index, rep.pass ? "pass" : "FAIL");
    if (!rep.pass) all_pass = false;
  }
  if (!any) throw ConfigError("unknown module '" + module + "'");
  return all_pass ? 0 : 1;
}

// ---- synth ----------------------------------------------------------------

int cmd_synth(const std::string& out, int images, uint64_t seed, const std::string& profile) {
  std::vector<SceneSpec> specs;
  for (int i = 0; i < images; ++i) {
    SceneSpec s;
    if (profile == "small") {
      // defaults: 64x64 canvas, objects 6..14 px, all in the small stratum
    } else if (profile == "mixed") {
      s.height = s.width = 192;
      s.size_min = 16;
      s.size_max = 48;
      s.num_objects = 8;
      s.cluster_spread = 28;
    } else {
      throw ConfigError("unknown profile '" + profile + "' (use small|mixed)");
    }
    s.seed = seed + static_cast<uint64_t>(i);
    specs.push_back(s);
  }
  write_dataset(specs, out);
  auto items = load_dataset(out);
  long small = 0, medium = 0, large = 0;
  for (const auto& item : items)
    for (const auto& g : item.gts) {
      if (in_stratum(g.area(), Stratum::Small))
        ++small;
      else if (in_stratum(g.area(), Stratum::Medium))
        ++medium;
      else
        ++large;
    }
  std::printf("wrote %zu images to %s\n", items.size(), out.c_str());
  std::printf("objects by stratum: small=%ld medium=%ld large=%ld\n", small, medium, large);
  return 0;
}

// ---- train ----------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& out,
              const std::string& resume) {
  RunConfig cfg = load_run_config(config_path);
  auto items = config_dataset(cfg);
  auto result =
      train_model<double>(cfg, items, out, resume.empty() ? fs::path{} : fs::path(resume));
  std::printf("trained %zu iterations this run (total %ld); checkpoint at %s\n",
              result.rows.size(), result.state.iteration,
              (fs::path(out) / "checkpoint.sodm").string().c_str());
  if (!result.rows.empty())
    std::printf("loss %.6f -> %.6f\n", static_cast<double>(result.rows.front().total),
                static_cast<double>(result.rows.back().total));
  return 0;
}

// ---- eval -----------------------------------------------------------------

std::string fmt_metric(double v) {
  if (std::isnan(v)) return "   -  ";
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%6.4f", v);
  return buf;
}

int cmd_eval(const std::string& checkpoint, const std::string& data,
             const std::string& config_path) {
  RunConfig cfg = load_run_config(config_path);
  TrainState<double> st = load_train_checkpoint<double>(cfg, checkpoint);
  auto items = data.empty() ? config_dataset(cfg) : load_dataset(data);
  if (items.empty()) throw ConfigError("evaluation dataset is empty");
  EvalResult r = evaluate_model(cfg, st.params, items);
  std::printf("%8s %8s %8s %8s %8s %8s\n", "AP", "AP50", "AP75", "AP_s", "AP_m", "AP_l");
  std::printf("%8s %8s %8s %8s %8s %8s\n", fmt_metric(r.ap).c_str(), fmt_metric(r.ap50).c_str(),
              fmt_metric(r.ap75).c_str(), fmt_metric(r.ap_s).c_str(), fmt_metric(r.ap_m).c_str(),
              fmt_metric(r.ap_l).c_str());
  nlohmann::ordered_json j;
  auto put = [&](const char* k, double v) {
    if (std::isnan(v))
      j[k] = nullptr;
    else
      j[k] = v;
  };
  put("ap", r.ap);
  put("ap50", r.ap50);
  put("ap75", r.ap75);
  put("ap_s", r.ap_s);
  put("ap_m", r.ap_m);
  put("ap_l", r.ap_l);
  fs::path json_path = fs::path(checkpoint).string() + ".eval.json";
  std::ofstream f(json_path);
  f << j.dump(2) << "\n";
  if (!f) throw IoError("cannot write " + json_path.string());
  std::printf("%s\n", j.dump().c_str());
  return 0;
}

// ---- bench ----------------------------------------------------------------

Tensor4d parse_size(const std::string& spec) {
  int n, c, h, w;
  if (std::sscanf(spec.c_str(), "%dx%dx%dx%d", &n, &c, &h, &w) != 4 || n <= 0 || c <= 0 ||
      h <= 0 || w <= 0)
    throw ConfigError("bad --size '" + spec + "', expected NxCxHxW");
  SplitMix64 rng(1);
  return Tensor4d::random_uniform(n, c, h, w, rng, -1.0, 1.0);
}

int cmd_bench(const std::string& op, const std::string& size, int iters) {
  using namespace sodm::ops;
  Tensor4d x = parse_size(size);
  SplitMix64 rng(2);
  std::function<void()> run;
  if (op == "conv2d") {
    auto w = Tensor4d::random_uniform(x.c, x.c, 3, 3, rng, -0.1, 0.1);
    run = [x, w] {
      Taped t;
      conv2d(t, t.leaf(x), t.leaf(w), -1, ConvSpec::same(x.c, x.c, 3));
    };
  } else if (op == "deform") {
    auto w = Tensor4d::random_uniform(x.c, x.c, 3, 3, rng, -0.1, 0.1);
    Tensor4d off(x.n, 18, x.h, x.w);
    for (auto& v : off.data) v = rng.uniform(-0.4, 0.4);
    run = [x, w, off] {
      Taped t;
      deform_conv2d(t, t.leaf(x), t.leaf(off), t.leaf(w), -1, 3, 1);
    };
  } else if (op == "adaptive") {
    AdaptiveConvSpec spec;
    spec.in_channels = x.c;
    Paramsd params;
    add_adaptive_conv_params(params, "ac", spec, rng);
    run = [x, spec, params]() mutable {
      Taped t;
      TapedParams<double> tp(t, params);
      int id = t.leaf(x);
      int k = adaptive_kernel_predict(t, id, spec, tp, "ac", false);
      adaptive_conv_apply(t, id, k, spec);
    };
  } else if (op == "slpa") {
    SlpaConfig cfg;
    Paramsd params;
    add_slpa_params(params, "slpa", cfg, rng);
    run = [x, cfg, params]() mutable {
      Taped t;
      TapedParams<double> tp(t, params);
      slpa_forward(t, t.leaf(x), cfg, tp, "slpa");
    };
  } else if (op == "msfem") {
    if (x.c % 4 != 0) throw ConfigError("msfem bench needs channels divisible by 4");
    MsfemConfig cfg;
    cfg.in_channels = x.c;
    cfg.out_channels = x.c;
    Paramsd params;
    add_msfem_params(params, "ms", cfg, rng);
    run = [x, cfg, params]() mutable {
      Taped t;
      TapedParams<double> tp(t, params);
      msfem_forward(t, t.leaf(x), cfg, tp, "ms", false);
    };
  } else {
    throw ConfigError("unknown op '" + op + "'");
  }
  if (iters < 1) throw ConfigError("--iters must be at least 1");
  for (int i = 0; i < 3; ++i) run();  // warmup, excluded
  std::vector<double> times;
  for (int i = 0; i < iters; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    run();
    auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  double median = times[times.size() / 2];
  double p95 = times[std::min(times.size() - 1, static_cast<size_t>(times.size() * 95 / 100))];
  double eps = static_cast<double>(x.numel()) / median;
  std::printf("%s %s: median %.6f s, p95 %.6f s, %.3e elements/s over %d iters\n", op.c_str(),
              size.c_str(), median, p95, eps, iters);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"small-object detection toolkit"};
  app.require_subcommand(1);

  std::string module = "all";
  uint64_t gc_seed = 1;
  double tol = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--module", module, "all|tensor|slpa|msfem|deform|fpn");
  gc->add_option("--seed", gc_seed, "input seed");
  gc->add_option("--tol", tol, "relative tolerance");

  std::string out_dir;
  int images = 8;
  uint64_t synth_seed = 42;
  std::string profile = "small";
  auto* sy = app.add_subcommand("synth", "generate a synthetic dataset");
  sy->add_option("--out", out_dir, "output directory")->required();
  sy->add_option("--images", images, "number of images");
  sy->add_option("--seed", synth_seed, "base seed");
  sy->add_option("--profile", profile, "small|mixed");

  std::string config_path, train_out, resume;
  auto* tr = app.add_subcommand("train", "train a model from a config");
  tr->add_option("--config", config_path, "run config JSON")->required();
  tr->add_option("--out", train_out, "output directory")->required();
  tr->add_option("--resume", resume, "checkpoint to resume from");

  std::string checkpoint, eval_data, eval_config;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--data", eval_data, "dataset directory (default: config data)");
  ev->add_option("--config", eval_config, "run config JSON")->required();

  std::string bench_op = "conv2d", bench_size = "1x16x32x32";
  int bench_iters = 10;
  auto* be = app.add_subcommand("bench", "micro-benchmarks");
  be->add_option("--op", bench_op, "conv2d|deform|adaptive|slpa|msfem");
  be->add_option("--size", bench_size, "input as NxCxHxW");
  be->add_option("--iters", bench_iters, "timed iterations");

  CLI11_PARSE(app, argc, argv);
  try {
    read_thread_cap();
    if (gc->parsed()) return cmd_gradcheck(module, gc_seed, tol);
    if (sy->parsed()) return cmd_synth(out_dir, images, synth_seed, profile);
    if (tr->parsed()) return cmd_train(config_path, train_out, resume);
    if (ev->parsed()) return cmd_eval(checkpoint, eval_data, eval_config);
    if (be->parsed()) return cmd_bench(bench_op, bench_size, bench_iters);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
