#pragma once

// Localization decoder: pre-norm residual blocks of query self-attention,
// visual cross-attention, text cross-attention and an FFN, plus the point and
// token-logit heads.

#include <cstddef>
#include <vector>

#include "cadgd/graph.hpp"
#include "cadgd/params.hpp"
#include "cadgd/query.hpp"
#include "cadgd/random.hpp"

namespace cadgd {

struct DecoderConfig {
  std::size_t channels = 16;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 32;
  // Width (normalized image units) of the Gaussian bias pulling each query's
  // visual attention toward its reference point; 0 disables it.
  double locality = 0.15;
};

// "decoder/block<l>/..." and the heads "heads/point{0,1}", "heads/token".
// With zero_output every sublayer's output projection starts at zero.
void init_decoder(ParamStore& store, Rng& rng, const DecoderConfig& config,
                  bool zero_output = false);
void init_heads(ParamStore& store, Rng& rng, std::size_t channels);

struct DecoderMemory {
  Var cells;             // flattened visual features [M, C]
  Tensor cell_encoding;  // [M, C]
  std::vector<CellRef> refs;
};

Var decoder_forward(Graph& g, const ParamStore& store, const DecoderConfig& config, Var queries,
                    const std::vector<CellRef>& positions, const DecoderMemory& memory, Var text,
                    const std::vector<bool>& non_pad);

// sigmoid(logit(reference) + FFN(content)), [K, 2] as (x, y).
Var predict_points(Graph& g, const ParamStore& store, Var contents,
                   const std::vector<CellRef>& positions);

inline constexpr double kMaskedLogit = -1e4;

// <Linear(content_k), token_i> / sqrt(C); pad columns are set to kMaskedLogit.
Var predict_logits(Graph& g, const ParamStore& store, Var contents, Var text,
                   const std::vector<bool>& non_pad);

}  // namespace cadgd
