#pragma once

// Parameter initialisation and graph binding for the building blocks shared by
// the model modules. Parameters live under slash-separated path prefixes.

#include <cstddef>
#include <string>

#include "cadgd/graph.hpp"
#include "cadgd/ops.hpp"
#include "cadgd/params.hpp"
#include "cadgd/random.hpp"

namespace cadgd {

enum class Init { xavier, zero, positive };

// "<path>/weight" [din,dout] and "<path>/bias" [dout] (bias starts at zero).
void add_linear(ParamStore& store, Rng& rng, const std::string& path, std::size_t din,
                std::size_t dout, Init init = Init::xavier);
Var apply_linear(Graph& g, const ParamStore& store, const std::string& path, Var x);

// "<path>/weight" [k,k,cin,cout], "<path>/bias" [cout]; padding keeps the size.
void add_conv(ParamStore& store, Rng& rng, const std::string& path, std::size_t k,
              std::size_t cin, std::size_t cout, Init init = Init::xavier);
Var apply_conv(Graph& g, const ParamStore& store, const std::string& path, Var x);

void add_layer_norm(ParamStore& store, const std::string& path, std::size_t c);
Var apply_layer_norm(Graph& g, const ParamStore& store, const std::string& path, Var x);

// Four projections "<path>/{q,k,v,out}". With zero_output the output
// projection starts at zero, so a residual block begins as the identity.
void add_attention(ParamStore& store, Rng& rng, const std::string& path, std::size_t c,
                   bool zero_output = false);
AttentionWeights bind_attention(Graph& g, const ParamStore& store, const std::string& path);

}  // namespace cadgd
