#include "cadgd/decoder.hpp"

#include <cmath>
#include <string>

#include "cadgd/layers.hpp"
#include "cadgd/ops.hpp"

namespace cadgd {
namespace {

std::string block(std::size_t l) { return "decoder/block" + std::to_string(l); }

Tensor locality_bias(const std::vector<CellRef>& queries, const std::vector<CellRef>& cells,
                     double width) {
  Tensor bias({queries.size(), cells.size()});
  const double inv = 1.0 / (2.0 * width * width);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t m = 0; m < cells.size(); ++m) {
      const double dx = queries[q].x - cells[m].x, dy = queries[q].y - cells[m].y;
      bias.at(q, m) = -(dx * dx + dy * dy) * inv;
    }
  }
  return bias;
}

}  // namespace

void init_decoder(ParamStore& store, Rng& rng, const DecoderConfig& config, bool zero_output) {
  const std::size_t c = config.channels;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = block(l);
    for (const char* sub : {"/self", "/visual", "/text"}) {
      add_layer_norm(store, p + sub + "_norm", c);
      add_attention(store, rng, p + sub, c, zero_output);
    }
    add_layer_norm(store, p + "/ffn_norm", c);
    add_linear(store, rng, p + "/ffn0", c, config.ffn_hidden);
    add_linear(store, rng, p + "/ffn1", config.ffn_hidden, c, zero_output ? Init::zero : Init::xavier);
  }
}

void init_heads(ParamStore& store, Rng& rng, std::size_t channels) {
  add_linear(store, rng, "heads/point0", channels, channels);
  add_linear(store, rng, "heads/point1", channels, 2);
  add_linear(store, rng, "heads/token", channels, channels);
}

Var decoder_forward(Graph& g, const ParamStore& store, const DecoderConfig& config, Var queries,
                    const std::vector<CellRef>& positions, const DecoderMemory& memory, Var text,
                    const std::vector<bool>& non_pad) {
  if (config.layers == 0) return queries;
  const Var query_pos = g.constant(position_encoding(positions, config.channels));
  const Var keys = add(memory.cells, g.constant(memory.cell_encoding));
  const Tensor bias = config.locality > 0.0 ? locality_bias(positions, memory.refs, config.locality)
                                            : Tensor();
  std::vector<std::size_t> tokens;
  for (std::size_t i = 0; i < non_pad.size(); ++i) {
    if (non_pad[i]) tokens.push_back(i);
  }
  const Var words = gather_rows(text, tokens);

  Var x = queries;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = block(l);
    Var h = apply_layer_norm(g, store, p + "/self_norm", x);
    Var hq = add(h, query_pos);
    x = add(x, multi_head_attention(hq, hq, h, config.heads, bind_attention(g, store, p + "/self")));

    h = apply_layer_norm(g, store, p + "/visual_norm", x);
    x = add(x, multi_head_attention(add(h, query_pos), keys, memory.cells, config.heads,
                                    bind_attention(g, store, p + "/visual"), bias));

    h = apply_layer_norm(g, store, p + "/text_norm", x);
    x = add(x, multi_head_attention(h, words, words, config.heads, bind_attention(g, store, p + "/text")));

    h = apply_layer_norm(g, store, p + "/ffn_norm", x);
    x = add(x, apply_linear(g, store, p + "/ffn1", relu(apply_linear(g, store, p + "/ffn0", h))));
  }
  return x;
}

Var predict_points(Graph& g, const ParamStore& store, Var contents,
                   const std::vector<CellRef>& positions) {
  Tensor ref({positions.size(), 2});
  for (std::size_t k = 0; k < positions.size(); ++k) {
    ref.at(k, 0) = std::log(positions[k].x / (1.0 - positions[k].x));
    ref.at(k, 1) = std::log(positions[k].y / (1.0 - positions[k].y));
  }
  Var offset = apply_linear(g, store, "heads/point1", relu(apply_linear(g, store, "heads/point0", contents)));
  return sigmoid(add(g.constant(std::move(ref)), offset));
}

Var predict_logits(Graph& g, const ParamStore& store, Var contents, Var text,
                   const std::vector<bool>& non_pad) {
  const double c = static_cast<double>(contents.shape().back());
  Var logits = scale(matmul(apply_linear(g, store, "heads/token", contents), transpose(text)),
                     1.0 / std::sqrt(c));
  return mask_columns(logits, non_pad, kMaskedLogit);
}

}  // namespace cadgd
