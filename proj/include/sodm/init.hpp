#pragma once

#include <cmath>
#include <string>

#include "sodm/nn.hpp"
#include "sodm/params.hpp"
#include "sodm/rng.hpp"

namespace sodm {

// Fan-in-scaled uniform init for a conv weight, zero bias. Entries are added
// under <prefix>.w / <prefix>.b.
template <class T>
void add_conv_params(Params<T>& params, const std::string& prefix, const ConvSpec& s,
                     SplitMix64& rng, bool zero_init = false) {
  int icg = s.in_channels / s.groups;
  Tensor4<T> w(s.out_channels, icg, s.kernel, s.kernel);
  if (!zero_init) {
    double bound = 1.0 / std::sqrt(static_cast<double>(icg) * s.kernel * s.kernel);
    for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
  }
  params.add(prefix + ".w", std::move(w));
  if (s.bias) params.add(prefix + ".b", Tensor4<T>(1, s.out_channels, 1, 1));
}

template <class T>
void add_bn_params(Params<T>& params, const std::string& prefix, int channels) {
  params.add(prefix + ".gamma", Tensor4<T>(1, channels, 1, 1, T(1)));
  params.add(prefix + ".beta", Tensor4<T>(1, channels, 1, 1));
  params.add(prefix + ".running_mean", Tensor4<T>(1, channels, 1, 1), /*learnable=*/false);
  params.add(prefix + ".running_var", Tensor4<T>(1, channels, 1, 1, T(1)), /*learnable=*/false);
}

template <class T>
int taped_conv(Tape<T>& t, TapedParams<T>& tp, const std::string& prefix, int x,
               const ConvSpec& s) {
  int bid = s.bias ? tp.id(prefix + ".b") : -1;
  return ops::conv2d(t, x, tp.id(prefix + ".w"), bid, s);
}

template <class T>
int taped_bn(Tape<T>& t, TapedParams<T>& tp, const std::string& prefix, int x, bool train) {
  return ops::batch_norm(t, x, tp.id(prefix + ".gamma"), tp.id(prefix + ".beta"),
                         tp.params().at(prefix + ".running_mean"),
                         tp.params().at(prefix + ".running_var"), train);
}

}  // namespace sodm
