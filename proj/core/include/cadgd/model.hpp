#pragma once

// Full CAD-GD pipeline for one (scene, expression) pair, with ablation flags
// that switch each CAD component off.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cadgd/decoder.hpp"
#include "cadgd/graph.hpp"
#include "cadgd/losses.hpp"
#include "cadgd/params.hpp"
#include "cadgd/query.hpp"
#include "cadgd/scene.hpp"

namespace cadgd {

struct Ablation {
  bool cadgen = true;
  bool spatial_attn = true;
  bool channel_attn = true;
  bool text_init = true;
  bool density_init = true;
  bool density_guided = false;  // inference only

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

// Spatial attention, density init and density-guided counting consume the
// estimator's output; enabling any of them without cadgen is rejected.
void validate(const Ablation& ablation);

// Rows 1..7 of the on/off matrix: R1 everything off, each following row adds
// cadgen, spatial, channel, text init, density init, density-guided counting.
Ablation ablation_row(int row);
// "R6", or a comma list of flag names ("cadgen,spatial_attn"), or "none".
Ablation parse_ablation(const std::string& text);
std::string ablation_string(const Ablation& ablation);

struct ModelConfig {
  std::size_t channels = 16;
  std::size_t queries = 100;
  int cade_depth = 2;
  bool text_row_softmax = false;
  DecoderConfig decoder;
  Ablation ablation;
};

void validate(const ModelConfig& config);
void init_model(ParamStore& store, const ModelConfig& config, std::uint64_t seed);

struct ForwardResult {
  std::vector<Var> visual;
  std::optional<std::vector<Var>> cad;  // D_i when cadgen is on
  Var density;                          // invalid when cadgen is off
  std::vector<Var> spatial_maps;        // per level, when enabled
  std::vector<Var> channel_maps;
  std::vector<Var> enhanced;            // F-hat
  QuerySelection selection;
  Var base_queries;                     // Q
  Var text_weights;                     // W, when text init is on
  Var text_queries;                     // Q-dot (equals Q when text init is off)
  Var queries;                          // Q-hat
  Var contents;                         // decoder output
  Var points;
  Var logits;
};

// With `fixed` the query positions are taken from it instead of being
// re-selected (used to hold the combinatorial step constant).
ForwardResult forward(Graph& g, const ParamStore& store, const ModelConfig& config,
                      const FeaturePyramid& pyramid, const TextFeatures& text,
                      const QuerySelection* fixed = nullptr);

struct PairTarget {
  Tensor points;   // [G, 2] normalized
  Tensor density;  // finest-level GT map
  Tensor positive; // expression embedding
  Tensor negative; // mean of the other registered attributes' expression embeddings
  bool has_negative = false;
};

PairTarget make_target(const Scene& scene, const Expression& expr, const Vocab& vocab,
                       int kernel_size);

struct PairLoss {
  Var total;
  LossReport report;
  Assignment assignment;
};

PairLoss pair_loss(Graph& g, const ParamStore& store, const ModelConfig& config,
                   const ForwardResult& fwd, const TextFeatures& text, const PairTarget& target,
                   const LossWeights& weights, const Assignment* fixed = nullptr);

}  // namespace cadgd
