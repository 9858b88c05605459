#pragma once

// Per-level spatial then channel gating of visual features driven by CAD
// features. Parameters live under "cadattn/level<l>/{spatial,channel}".

#include <cstddef>

#include "cadgd/graph.hpp"
#include "cadgd/params.hpp"
#include "cadgd/random.hpp"

namespace cadgd {

inline constexpr std::size_t kSpatialKernel = 7;
inline constexpr int kChannelMlpLayers = 4;

void init_spatial_attention(ParamStore& store, Rng& rng, std::size_t level);
void init_channel_attention(ParamStore& store, Rng& rng, std::size_t level, std::size_t channels);

// sigmoid(conv7x7([max over channels, mean over channels])), [h, w, 1].
Var spatial_attention_map(Graph& g, const ParamStore& store, std::size_t level, Var cad);
Var apply_spatial(Var features, Var map);

// sigmoid(MLP(avg pool) + MLP(max pool)) with one MLP shared by both branches, [1, C].
Var channel_attention_map(Graph& g, const ParamStore& store, std::size_t level, Var features);
Var apply_channel(Var features, Var map);

}  // namespace cadgd
