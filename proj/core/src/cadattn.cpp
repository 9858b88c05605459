#include "cadgd/cadattn.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cadgd/layers.hpp"
#include "cadgd/ops.hpp"

namespace cadgd {
namespace {

std::string prefix(std::size_t level) { return "cadattn/level" + std::to_string(level); }

std::string mlp_path(std::size_t level, int i) {
  return prefix(level) + "/channel/mlp" + std::to_string(i);
}

Var mlp(Graph& g, const ParamStore& store, std::size_t level, Var x) {
  for (int i = 0; i < kChannelMlpLayers; ++i) {
    x = apply_linear(g, store, mlp_path(level, i), x);
    if (i + 1 < kChannelMlpLayers) x = relu(x);
  }
  return x;
}

// Sigmoid rounds to exactly 0 or 1 in double once |x| passes ~37 (or ~745
// below); keep the gate inside the open interval.
Var gate(Var logits) {
  static const double ceil = std::nextafter(1.0, 0.0);
  return clamp(sigmoid(logits), std::numeric_limits<double>::min(), ceil);
}

}  // namespace

void init_spatial_attention(ParamStore& store, Rng& rng, std::size_t level) {
  add_conv(store, rng, prefix(level) + "/spatial", kSpatialKernel, 2, 1);
}

void init_channel_attention(ParamStore& store, Rng& rng, std::size_t level, std::size_t channels) {
  for (int i = 0; i < kChannelMlpLayers; ++i) add_linear(store, rng, mlp_path(level, i), channels, channels);
}

Var spatial_attention_map(Graph& g, const ParamStore& store, std::size_t level, Var cad) {
  Var pooled = concat_last({max_last(cad), mean_last(cad)});
  return gate(apply_conv(g, store, prefix(level) + "/spatial", pooled));
}

Var apply_spatial(Var features, Var map) { return mul_channels(features, map); }

Var channel_attention_map(Graph& g, const ParamStore& store, std::size_t level, Var features) {
  return gate(add(mlp(g, store, level, mean_positions(features)),
                  mlp(g, store, level, max_positions(features))));
}

Var apply_channel(Var features, Var map) { return mul_positions(features, map); }

}  // namespace cadgd
