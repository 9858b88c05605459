#pragma once

// Query position selection and the two dynamic query initialisations.

#include <cstddef>
#include <ostream>
#include <vector>

#include "cadgd/graph.hpp"
#include "cadgd/params.hpp"
#include "cadgd/random.hpp"
#include "cadgd/scene.hpp"

namespace cadgd {

struct CellRef {
  std::size_t level = 0;
  std::size_t cell = 0;  // row-major index within the level
  double x = 0.0;        // normalized cell center in [0, 1]
  double y = 0.0;
};

// Every cell of a pyramid in (level, cell) order; `offsets[l]` is the flat
// index of the first cell of level l.
struct PyramidLayout {
  std::vector<CellRef> cells;
  std::vector<std::size_t> offsets;

  std::size_t flat_index(std::size_t level, std::size_t cell) const;
};

PyramidLayout pyramid_layout(const std::vector<Shape>& level_shapes);

// Sinusoidal encoding of (x, y, level / (levels - 1)), one row per reference.
Tensor position_encoding(const std::vector<CellRef>& refs, std::size_t channels,
                         std::size_t levels = kPyramidLevels);

// Row-concatenation of the levels reshaped to [h*w, C].
Var flatten_levels(const std::vector<Var>& levels);

struct QuerySelection {
  std::vector<CellRef> positions;  // by descending score
  std::vector<double> scores;
  std::vector<std::size_t> flat;   // PyramidLayout flat indices
};

// Score per cell = max over non-pad tokens of <cell feature, token>; keeps the
// top k, ties broken by level then cell index.
QuerySelection select_query_positions(const std::vector<Tensor>& levels,
                                      const TextFeatures& text, std::size_t k);

// "query/content" [K, C] and "query/text_matrix" [C, C].
void init_query_content(ParamStore& store, Rng& rng, std::size_t k, std::size_t channels);
void init_text_init(ParamStore& store, Rng& rng, std::size_t channels);
// "query/density_attention".
void init_density_init(ParamStore& store, Rng& rng, std::size_t channels);

struct TextInit {
  Var weights;  // W [K, N], pad columns zero
  Var queries;  // [K, C]
};

// W = Q * GELU(F_t M)^T with pad columns zeroed (or row-softmaxed over the
// non-pad columns), then W * F_t.
TextInit text_init(Var content, Var text, Var matrix, const std::vector<bool>& non_pad,
                   bool row_softmax = false);

Var gather_cad(const std::vector<Var>& cad_levels, const QuerySelection& selection);

// Q + MHA(Q, D_K, D_K).
Var density_init(Graph& g, const ParamStore& store, Var queries, Var cad_at_queries,
                 std::size_t heads);

// One line per query: index, level, cell, x, y, score, then content values.
void write_query_dump(std::ostream& out, const QuerySelection& selection, const Tensor& contents);

}  // namespace cadgd
