#pragma once

#include <string>
#include <vector>

#include "sodm/init.hpp"
#include "sodm/nn.hpp"
#include "sodm/ops_basic.hpp"
#include "sodm/params.hpp"

namespace sodm {

// Spatial attention gate: channel max/avg pooling, three parallel dilated 3x3
// convolutions over the pooled pair, 1x1 fusion, sigmoid, multiplicative
// rescale of the input.
struct SlpaConfig {
  std::vector<int> dilation_rates{1, 2, 3};
  int branch_channels = 1;
  static constexpr int kernel = 3;

  void validate() const {
    if (dilation_rates.size() != 3)
      throw ConfigError("SLPA requires exactly 3 dilation rates, got " +
                        std::to_string(dilation_rates.size()));
    for (int r : dilation_rates)
      if (r <= 0) throw ConfigError("SLPA dilation rates must be positive");
    if (branch_channels <= 0) throw ConfigError("SLPA branch_channels must be positive");
  }
};

// Branch convs get fan-in init; the fusing 1x1 conv is zero-initialized so the
// gate starts neutral at 0.5.
template <class T>
void add_slpa_params(Params<T>& params, const std::string& prefix, const SlpaConfig& cfg,
                     SplitMix64& rng) {
  cfg.validate();
  for (int i = 0; i < 3; ++i) {
    ConvSpec s = ConvSpec::same(2, cfg.branch_channels, cfg.kernel, cfg.dilation_rates[i]);
    add_conv_params(params, prefix + ".branch" + std::to_string(i), s, rng);
  }
  add_conv_params(params, prefix + ".fuse", ConvSpec::same(3 * cfg.branch_channels, 1, 1), rng,
                  /*zero_init=*/true);
}

struct SlpaOut {
  int rescaled;       // F_s, same dims as the input
  int attention_map;  // M_s, (n, 1, h, w), values strictly in (0, 1)
};

template <class T>
SlpaOut slpa_forward(Tape<T>& t, int fc, const SlpaConfig& cfg, TapedParams<T>& tp,
                     const std::string& prefix) {
  cfg.validate();
  int mx = ops::pool_channel(t, fc, ops::PoolMode::Max);
  int av = ops::pool_channel(t, fc, ops::PoolMode::Avg);
  int pooled = ops::concat_channels(t, {mx, av});
  std::vector<int> branches;
  for (int i = 0; i < 3; ++i) {
    ConvSpec s = ConvSpec::same(2, cfg.branch_channels, cfg.kernel, cfg.dilation_rates[i]);
    int c = taped_conv(t, tp, prefix + ".branch" + std::to_string(i), pooled, s);
    branches.push_back(ops::activation(t, c, ops::Activation::Relu));
  }
  int z = ops::concat_channels(t, branches);
  int logits = taped_conv(t, tp, prefix + ".fuse", z, ConvSpec::same(3 * cfg.branch_channels, 1, 1));
  int ms = ops::activation(t, logits, ops::Activation::Sigmoid);
  int fs = ops::mul(t, fc, ms);
  return {fs, ms};
}

}  // namespace sodm
