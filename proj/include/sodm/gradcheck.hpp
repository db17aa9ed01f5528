#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sodm/params.hpp"
#include "sodm/rng.hpp"
#include "sodm/tape.hpp"
#include "sodm/tensor.hpp"

namespace sodm {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int worst_leaf = -1;
  size_t worst_index = 0;
  bool pass = false;
};

// Central finite-difference check of a tape-built graph. `build` must be pure
// and deterministic: it receives a fresh tape plus leaf ids for `inputs` and
// returns the output id. The scalar functional being differentiated is
// sum(seed ⊙ output) with a fixed random seed, so one backward pass yields
// every analytic gradient at once.
inline GradCheckReport finite_diff_check(
    const std::function<int(Taped&, const std::vector<int>&)>& build,
    const std::vector<Tensor4d>& inputs, double step = 1e-5, double tol = 1e-4,
    uint64_t seed_grad_seed = 0x5eed) {
  auto eval = [&](const std::vector<Tensor4d>& xs, Tensor4d* seed_out, std::map<int, Tensor4d>* grads) {
    Taped tape;
    std::vector<int> leaf_ids;
    for (const auto& x : xs) leaf_ids.push_back(tape.leaf(x));
    int out = build(tape, leaf_ids);
    const Tensor4d& ov = tape.val(out);
    SplitMix64 rng(seed_grad_seed);
    Tensor4d seed(ov.n, ov.c, ov.h, ov.w);
    for (auto& v : seed.data) v = rng.uniform(-1.0, 1.0);
    if (seed_out) *seed_out = seed;
    double scalar = 0.0;
    for (size_t i = 0; i < ov.data.size(); ++i) {
      if (!std::isfinite(ov.data[i])) {
        std::ostringstream os;
        os << "non-finite output at flat index " << i << " while probing";
        throw NumericError(os.str());
      }
      scalar += seed.data[i] * ov.data[i];
    }
    if (grads) *grads = tape.backward(out, seed, leaf_ids);
    return scalar;
  };

  std::map<int, Tensor4d> analytic;
  Tensor4d seed;
  eval(inputs, &seed, &analytic);

  GradCheckReport report;
  for (size_t li = 0; li < inputs.size(); ++li) {
    const Tensor4d& g = analytic[static_cast<int>(li)];
    for (size_t i = 0; i < inputs[li].numel(); ++i) {
      std::vector<Tensor4d> probe = inputs;
      probe[li].data[i] += step;
      double up = eval(probe, nullptr, nullptr);
      probe[li].data[i] -= 2 * step;
      double down = eval(probe, nullptr, nullptr);
      double numeric = (up - down) / (2 * step);
      double a = g.data[i];
      double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_leaf = static_cast<int>(li);
        report.worst_index = i;
      }
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

// Gradient check of a parameterized module. Probes the data inputs and every
// learnable parameter; non-learnable entries (running stats) come from a
// fresh copy of `params` on each evaluation so stat updates cannot leak
// between probes.
inline GradCheckReport module_gradcheck(
    const Params<double>& params, const std::vector<Tensor4d>& data_inputs,
    const std::function<int(Taped&, const std::vector<int>&, TapedParams<double>&)>& build,
    double step = 1e-5, double tol = 1e-4) {
  std::vector<Tensor4d> inputs = data_inputs;
  std::vector<std::string> names;
  for (const auto& e : params.entries())
    if (e.learnable) {
      inputs.push_back(e.tensor);
      names.push_back(e.name);
    }
  return finite_diff_check(
      [&](Taped& t, const std::vector<int>& ids) {
        Params<double> probe = params;
        TapedParams<double> tp(t, probe);
        std::vector<int> data_ids(ids.begin(), ids.begin() + data_inputs.size());
        for (size_t i = 0; i < names.size(); ++i) tp.bind(names[i], ids[data_inputs.size() + i]);
        return build(t, data_ids, tp);
      },
      inputs, step, tol);
}

}  // namespace sodm
