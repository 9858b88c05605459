#pragma once

// Cross-modal similarity features and the U-shaped estimator that turns them
// into per-level CAD features and a density map.

#include <cstddef>
#include <vector>

#include "cadgd/graph.hpp"
#include "cadgd/params.hpp"
#include "cadgd/random.hpp"

namespace cadgd {

// Parameters under "cadgen/": the shared projection "proj" + "proj_norm",
// per-level 3x3 encoders "encode<l>", per-step decoder convs "decode<l>_<d>"
// for l = 0..2, and the 1x1 head "density".
void init_cadgen(ParamStore& store, Rng& rng, std::size_t channels, int depth);

// Mean of the rows whose mask entry is true, shape [1, C].
Var pool_text(Var text, const std::vector<bool>& non_pad);

// S_i = LayerNorm(Linear(F_i)) * pooled text, per level.
std::vector<Var> similarity_features(Graph& g, const ParamStore& store,
                                     const std::vector<Var>& visual, Var text,
                                     const std::vector<bool>& non_pad);

struct CadFeatures {
  std::vector<Var> levels;  // D_i, same shapes as the visual levels
  Var density;              // [h0, w0, 1], non-negative
};

CadFeatures cade_forward(Graph& g, const ParamStore& store, const std::vector<Var>& visual,
                         const std::vector<Var>& similarity, int depth);

// Sum over cells of the squared difference.
Var density_loss(Var pred, Var gt);
double density_count(const Tensor& map);

}  // namespace cadgd
