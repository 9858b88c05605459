#include "cadgd/model.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "cadgd/cadattn.hpp"
#include "cadgd/cadgen.hpp"
#include "cadgd/kernels.hpp"
#include "cadgd/ops.hpp"
#include "cadgd/random.hpp"

namespace cadgd {
namespace {

struct FlagName {
  const char* name;
  bool Ablation::*flag;
};

constexpr FlagName kFlags[] = {
    {"cadgen", &Ablation::cadgen},
    {"spatial_attn", &Ablation::spatial_attn},
    {"channel_attn", &Ablation::channel_attn},
    {"text_init", &Ablation::text_init},
    {"density_init", &Ablation::density_init},
    {"density_guided_inference", &Ablation::density_guided},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

}  // namespace

void validate(const Ablation& a) {
  if (a.cadgen) return;
  for (auto [name, flag] : {std::pair{"spatial_attn", a.spatial_attn},
                            std::pair{"density_init", a.density_init},
                            std::pair{"density_guided_inference", a.density_guided}}) {
    if (flag) throw std::invalid_argument(std::string(name) + " needs cadgen enabled");
  }
}

Ablation ablation_row(int row) {
  if (row < 1 || row > 7) throw std::invalid_argument("ablation rows are R1..R7");
  Ablation a;
  int i = 0;
  for (const auto& f : kFlags) a.*(f.flag) = ++i < row;
  return a;
}

Ablation parse_ablation(const std::string& text) {
  const std::string t = trim(text);
  if ((t.size() == 2) && (t[0] == 'R' || t[0] == 'r') && t[1] >= '1' && t[1] <= '7') {
    return ablation_row(t[1] - '0');
  }
  Ablation a = ablation_row(1);
  if (t == "none" || t.empty()) return a;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto it = std::find_if(std::begin(kFlags), std::end(kFlags),
                                 [&](const FlagName& f) { return item == f.name; });
    if (it == std::end(kFlags)) throw std::invalid_argument("unknown ablation flag '" + item + "'");
    a.*(it->flag) = true;
  }
  validate(a);
  return a;
}

std::string ablation_string(const Ablation& a) {
  std::string out;
  for (const auto& f : kFlags) {
    if (!(a.*(f.flag))) continue;
    if (!out.empty()) out += ',';
    out += f.name;
  }
  return out.empty() ? "none" : out;
}

void validate(const ModelConfig& c) {
  validate(c.ablation);
  if (c.channels == 0 || c.queries == 0) throw std::invalid_argument("channels and queries must be positive");
  if (c.decoder.channels != c.channels) throw std::invalid_argument("decoder width must equal channels");
  if (c.decoder.heads == 0 || c.channels % c.decoder.heads != 0) {
    throw std::invalid_argument("heads must divide channels");
  }
  if (c.cade_depth < 1) throw std::invalid_argument("estimator depth must be >= 1");
  if (c.decoder.locality < 0.0) throw std::invalid_argument("negative locality width");
}

void init_model(ParamStore& store, const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  Rng rng(Rng::derive(seed, 0x9a4a));
  const std::size_t c = config.channels;
  const Ablation& a = config.ablation;
  init_query_content(store, rng, config.queries, c);
  if (a.text_init) init_text_init(store, rng, c);
  if (a.cadgen) init_cadgen(store, rng, c, config.cade_depth);
  for (std::size_t l = 0; l < kPyramidLevels; ++l) {
    if (a.spatial_attn) init_spatial_attention(store, rng, l);
    if (a.channel_attn) init_channel_attention(store, rng, l, c);
  }
  if (a.density_init) init_density_init(store, rng, c);
  init_decoder(store, rng, config.decoder);
  init_heads(store, rng, c);
  init_contrast_head(store, rng, c);
}

ForwardResult forward(Graph& g, const ParamStore& store, const ModelConfig& config,
                      const FeaturePyramid& pyramid, const TextFeatures& text,
                      const QuerySelection* fixed) {
  const Ablation& a = config.ablation;
  if (pyramid.levels.size() != kPyramidLevels) throw std::invalid_argument("pyramid needs four levels");
  ForwardResult r;
  for (const Tensor& l : pyramid.levels) r.visual.push_back(g.constant(l));
  const Var words = g.constant(text.features);
  const auto non_pad = text.non_pad();

  if (a.cadgen) {
    CadFeatures cad = cade_forward(g, store, r.visual,
                                   similarity_features(g, store, r.visual, words, non_pad),
                                   config.cade_depth);
    r.cad = cad.levels;
    r.density = cad.density;
  }
  for (std::size_t l = 0; l < kPyramidLevels; ++l) {
    Var f = r.visual[l];
    if (a.spatial_attn) {
      r.spatial_maps.push_back(spatial_attention_map(g, store, l, (*r.cad)[l]));
      f = apply_spatial(f, r.spatial_maps.back());
    }
    if (a.channel_attn) {
      r.channel_maps.push_back(channel_attention_map(g, store, l, f));
      f = apply_channel(f, r.channel_maps.back());
    }
    r.enhanced.push_back(f);
  }

  if (fixed) {
    r.selection = *fixed;
  } else {
    std::vector<Tensor> values;
    for (Var f : r.enhanced) values.push_back(f.value());
    r.selection = select_query_positions(values, text, config.queries);
  }

  r.base_queries = g.parameter(store, "query/content");
  r.text_queries = r.base_queries;
  if (a.text_init) {
    TextInit ti = text_init(r.base_queries, words, g.parameter(store, "query/text_matrix"), non_pad,
                            config.text_row_softmax);
    r.text_weights = ti.weights;
    r.text_queries = ti.queries;
  }
  r.queries = r.text_queries;
  if (a.density_init) {
    r.queries = density_init(g, store, r.text_queries, gather_cad(*r.cad, r.selection),
                             config.decoder.heads);
  }

  std::vector<Shape> shapes;
  for (const Tensor& l : pyramid.levels) shapes.push_back(l.shape());
  DecoderMemory memory;
  memory.cells = flatten_levels(r.enhanced);
  memory.refs = pyramid_layout(shapes).cells;
  memory.cell_encoding = position_encoding(memory.refs, config.channels);

  r.contents = decoder_forward(g, store, config.decoder, r.queries, r.selection.positions, memory,
                               words, non_pad);
  r.points = predict_points(g, store, r.contents, r.selection.positions);
  r.logits = predict_logits(g, store, r.contents, words, non_pad);
  return r;
}

PairTarget make_target(const Scene& scene, const Expression& expr, const Vocab& vocab,
                       int kernel_size) {
  PairTarget t;
  const auto objs = referred_objects(scene, expr);
  t.points = Tensor({objs.size(), 2});
  for (std::size_t i = 0; i < objs.size(); ++i) {
    t.points.at(i, 0) = scene.objects[objs[i]].x / scene.width;
    t.points.at(i, 1) = scene.objects[objs[i]].y / scene.height;
  }
  const auto shapes = pyramid_shapes(scene.width, scene.height);
  t.density = gt_density_map(scene, expr, shapes[0].first, shapes[0].second, kernel_size);
  t.positive = expression_embedding(expr, vocab);
  t.negative = Tensor({vocab.channels()});
  double others = 0.0;
  for (int attr : vocab.registry.at(static_cast<std::size_t>(expr.class_id))) {
    if (std::find(expr.attributes.begin(), expr.attributes.end(), attr) != expr.attributes.end()) continue;
    t.negative += expression_embedding(make_expression(expr.class_id, {attr}, vocab, expr.tokens.size()), vocab);
    others += 1.0;
  }
  t.has_negative = others > 0.0;
  if (t.has_negative) t.negative *= 1.0 / others;
  return t;
}

PairLoss pair_loss(Graph& g, const ParamStore& store, const ModelConfig& config,
                   const ForwardResult& fwd, const TextFeatures& text, const PairTarget& target,
                   const LossWeights& weights, const Assignment* fixed) {
  const auto non_pad = text.non_pad();
  PairLoss out;
  if (fixed) {
    out.assignment = *fixed;
  } else {
    const Tensor cost = matching_cost(fwd.points.value(), kernels::sigmoid(fwd.logits.value()),
                                      target.points, non_pad, weights.lambda1);
    out.assignment = hungarian_match(cost);
  }
  Var lm = match_loss(fwd.points, out.assignment, target.points);
  Var lc = cls_loss(fwd.logits, out.assignment, non_pad);
  Var lk = target.has_negative
               ? contrastive_loss(g, store, fwd.contents, out.assignment, target.positive, target.negative)
               : g.constant(Tensor({1}));
  Var ld;
  if (config.ablation.cadgen) ld = density_loss(fwd.density, g.constant(target.density));
  out.total = weighted_total(lm, lc, lk, ld, weights);
  out.report = total_loss(lm.value().item(), lc.value().item(), lk.value().item(),
                          ld.valid() ? ld.value().item() : 0.0, weights);
  return out;
}

}  // namespace cadgd
