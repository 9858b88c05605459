#include "cadgd/query.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "cadgd/layers.hpp"
#include "cadgd/ops.hpp"

namespace cadgd {

std::size_t PyramidLayout::flat_index(std::size_t level, std::size_t cell) const {
  const std::size_t end = level + 1 < offsets.size() ? offsets[level + 1] : cells.size();
  if (level >= offsets.size() || offsets[level] + cell >= end) {
    throw std::out_of_range("cell " + std::to_string(cell) + " outside level " + std::to_string(level));
  }
  return offsets[level] + cell;
}

PyramidLayout pyramid_layout(const std::vector<Shape>& level_shapes) {
  PyramidLayout layout;
  for (std::size_t l = 0; l < level_shapes.size(); ++l) {
    const std::size_t h = level_shapes[l].at(0), w = level_shapes[l].at(1);
    layout.offsets.push_back(layout.cells.size());
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        layout.cells.push_back({l, i * w + j, (static_cast<double>(j) + 0.5) / static_cast<double>(w),
                                (static_cast<double>(i) + 0.5) / static_cast<double>(h)});
      }
    }
  }
  return layout;
}

Tensor position_encoding(const std::vector<CellRef>& refs, std::size_t channels, std::size_t levels) {
  Tensor pe({refs.size(), channels});
  const double level_norm = levels > 1 ? static_cast<double>(levels - 1) : 1.0;
  for (std::size_t r = 0; r < refs.size(); ++r) {
    const double coords[3] = {refs[r].x, refs[r].y, static_cast<double>(refs[r].level) / level_norm};
    // Channel pairs cycle through x, y, level with doubling frequency.
    for (std::size_t p = 0; 2 * p < channels; ++p) {
      const double angle = std::numbers::pi * std::ldexp(coords[p % 3], static_cast<int>(p / 3));
      pe.at(r, 2 * p) = std::sin(angle);
      if (2 * p + 1 < channels) pe.at(r, 2 * p + 1) = std::cos(angle);
    }
  }
  return pe;
}

Var flatten_levels(const std::vector<Var>& levels) {
  std::vector<Var> rows;
  for (Var l : levels) {
    const Shape& s = l.shape();
    rows.push_back(reshape(l, {s.at(0) * s.at(1), s.at(2)}));
  }
  return rows.size() == 1 ? rows.front() : concat_rows(rows);
}

QuerySelection select_query_positions(const std::vector<Tensor>& levels, const TextFeatures& text,
                                      std::size_t k) {
  std::vector<Shape> shapes;
  for (const Tensor& l : levels) shapes.push_back(l.shape());
  const PyramidLayout layout = pyramid_layout(shapes);
  if (k > layout.cells.size()) {
    throw std::invalid_argument("asked for " + std::to_string(k) + " queries but the pyramid has " +
                                std::to_string(layout.cells.size()) + " cells");
  }
  const std::size_t c = text.features.dim(1);
  const auto keep = text.non_pad();
  std::vector<double> score(layout.cells.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t f = 0; f < layout.cells.size(); ++f) {
    const CellRef& ref = layout.cells[f];
    const double* cell = levels[ref.level].data().data() + ref.cell * c;
    for (std::size_t t = 0; t < keep.size(); ++t) {
      if (!keep[t]) continue;
      double dot = 0.0;
      for (std::size_t i = 0; i < c; ++i) dot += cell[i] * text.features.at(t, i);
      score[f] = std::max(score[f], dot);
    }
  }
  // Flat order is already (level, cell), so index order breaks ties.
  std::vector<std::size_t> order(layout.cells.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return score[a] != score[b] ? score[a] > score[b] : a < b;
                    });
  QuerySelection sel;
  for (std::size_t i = 0; i < k; ++i) {
    sel.positions.push_back(layout.cells[order[i]]);
    sel.scores.push_back(score[order[i]]);
    sel.flat.push_back(order[i]);
  }
  return sel;
}

void init_query_content(ParamStore& store, Rng& rng, std::size_t k, std::size_t channels) {
  store.add("query/content", rng.normal_tensor({k, channels}, 1.0));
}

void init_text_init(ParamStore& store, Rng& rng, std::size_t channels) {
  store.add("query/text_matrix", rng.normal_tensor({channels, channels}, 1.0 / std::sqrt(static_cast<double>(channels))));
}

void init_density_init(ParamStore& store, Rng& rng, std::size_t channels) {
  add_attention(store, rng, "query/density_attention", channels);
}

TextInit text_init(Var content, Var text, Var matrix, const std::vector<bool>& non_pad,
                   bool row_softmax) {
  const Shape& qs = content.shape();
  const Shape& ts = text.shape();
  const Shape& ms = matrix.shape();
  if (qs.size() != 2 || ts.size() != 2 || ms.size() != 2 || qs[1] != ts[1] || ms[0] != ts[1] ||
      ms[1] != ts[1] || non_pad.size() != ts[0]) {
    throw std::invalid_argument("text init shapes: content " + shape_string(qs) + ", text " +
                                shape_string(ts) + ", matrix " + shape_string(ms));
  }
  Var dynamic_text = gelu(matmul(text, matrix));
  Var w = matmul(content, transpose(dynamic_text));
  w = row_softmax ? softmax(mask_columns(w, non_pad, -1e4)) : mask_columns(w, non_pad, 0.0);
  return {w, matmul(w, text)};
}

Var gather_cad(const std::vector<Var>& cad_levels, const QuerySelection& selection) {
  std::vector<Shape> shapes;
  for (Var l : cad_levels) shapes.push_back(l.shape());
  const PyramidLayout layout = pyramid_layout(shapes);
  std::vector<std::size_t> rows;
  for (const CellRef& p : selection.positions) rows.push_back(layout.flat_index(p.level, p.cell));
  return gather_rows(flatten_levels(cad_levels), rows);
}

Var density_init(Graph& g, const ParamStore& store, Var queries, Var cad_at_queries,
                 std::size_t heads) {
  require_same_shape(queries.value(), cad_at_queries.value(), "density_init");
  return add(queries, multi_head_attention(queries, cad_at_queries, cad_at_queries, heads,
                                           bind_attention(g, store, "query/density_attention")));
}

void write_query_dump(std::ostream& out, const QuerySelection& selection, const Tensor& contents) {
  const std::size_t c = contents.dim(1);
  out << std::setprecision(17);
  for (std::size_t k = 0; k < selection.positions.size(); ++k) {
    const CellRef& p = selection.positions[k];
    out << k << '\t' << p.level << '\t' << p.cell << '\t' << p.x << '\t' << p.y << '\t'
        << selection.scores[k];
    for (std::size_t i = 0; i < c; ++i) out << '\t' << contents.at(k, i);
    out << '\n';
  }
}

}  // namespace cadgd
