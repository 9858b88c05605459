#include "cadgd/cadgen.hpp"

#include <stdexcept>
#include <string>

#include "cadgd/layers.hpp"
#include "cadgd/ops.hpp"

namespace cadgd {
namespace {

constexpr std::size_t kLevels = 4;

std::string level_path(const char* stem, std::size_t level) {
  return "cadgen/" + std::string(stem) + std::to_string(level);
}

std::string decode_path(std::size_t level, int d) {
  return level_path("decode", level) + "_" + std::to_string(d);
}

}  // namespace

void init_cadgen(ParamStore& store, Rng& rng, std::size_t channels, int depth) {
  if (depth < 1) throw std::invalid_argument("estimator depth must be >= 1");
  add_linear(store, rng, "cadgen/proj", channels, channels);
  add_layer_norm(store, "cadgen/proj_norm", channels);
  for (std::size_t l = 0; l < kLevels; ++l) {
    add_conv(store, rng, level_path("encode", l), 3, 2 * channels, channels);
  }
  for (std::size_t l = 0; l + 1 < kLevels; ++l) {
    for (int d = 0; d < depth; ++d) add_conv(store, rng, decode_path(l, d), 3, channels, channels);
  }
  // Non-negative start keeps the final ReLU alive on non-negative features.
  add_conv(store, rng, "cadgen/density", 1, channels, 1, Init::positive);
}

Var pool_text(Var text, const std::vector<bool>& non_pad) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < non_pad.size(); ++i) {
    if (non_pad[i]) rows.push_back(i);
  }
  if (rows.empty()) throw std::invalid_argument("expression has no non-pad tokens");
  return mean_positions(gather_rows(text, rows));
}

std::vector<Var> similarity_features(Graph& g, const ParamStore& store,
                                     const std::vector<Var>& visual, Var text,
                                     const std::vector<bool>& non_pad) {
  Var pooled = pool_text(text, non_pad);
  std::vector<Var> out;
  for (Var f : visual) {
    Var p = apply_layer_norm(g, store, "cadgen/proj_norm", apply_linear(g, store, "cadgen/proj", f));
    out.push_back(mul_positions(p, pooled));
  }
  return out;
}

CadFeatures cade_forward(Graph& g, const ParamStore& store, const std::vector<Var>& visual,
                         const std::vector<Var>& similarity, int depth) {
  if (visual.size() != kLevels || similarity.size() != kLevels) {
    throw std::invalid_argument("estimator expects four pyramid levels");
  }
  std::vector<Var> encoded(kLevels);
  for (std::size_t l = 0; l < kLevels; ++l) {
    if (visual[l].shape() != similarity[l].shape()) {
      throw std::invalid_argument("visual and similarity level " + std::to_string(l) +
                                  " differ: " + shape_string(visual[l].shape()) + " vs " +
                                  shape_string(similarity[l].shape()));
    }
    encoded[l] = relu(apply_conv(g, store, level_path("encode", l), concat_last({visual[l], similarity[l]})));
  }
  CadFeatures out;
  out.levels.resize(kLevels);
  out.levels[kLevels - 1] = encoded[kLevels - 1];
  for (std::size_t l = kLevels - 1; l-- > 0;) {
    Var x = add(bilinear_upsample(out.levels[l + 1], 2), encoded[l]);
    for (int d = 0; d < depth; ++d) x = relu(apply_conv(g, store, decode_path(l, d), x));
    out.levels[l] = x;
  }
  out.density = relu(apply_conv(g, store, "cadgen/density", out.levels[0]));
  return out;
}

Var density_loss(Var pred, Var gt) {
  require_same_shape(pred.value(), gt.value(), "density_loss");
  return sum(square(sub(pred, gt)));
}

double density_count(const Tensor& map) { return map.sum(); }

}  // namespace cadgd
