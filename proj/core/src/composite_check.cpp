#include "cadgd/composite_check.hpp"

#include "cadgd/gradcheck_suite.hpp"
#include "cadgd/model.hpp"
#include "cadgd/train.hpp"

namespace cadgd {

Config micro_config() {
  Config c;
  c.scene.image_width = 32;
  c.scene.image_height = 32;
  c.scene.min_objects = 2;
  c.scene.max_objects = 2;
  c.scene.channels = 8;
  c.model.channels = 8;
  c.model.queries = 8;
  c.model.cade_depth = 1;
  c.model.decoder.channels = 8;
  c.model.decoder.layers = 1;
  c.model.decoder.heads = 2;
  c.model.decoder.ffn_hidden = 8;
  c.model.ablation = ablation_row(7);
  return c;
}

GradCheckReport composite_grad_check(const Config& config, std::uint64_t seed,
                                     const std::vector<std::string>& paths, std::size_t stride) {
  validate(config);
  const Vocab vocab = make_vocab(config.scene);
  const Scene scene = generate_scene(config.scene, vocab, seed);
  const PreparedScene ps = prepare_scene(scene, vocab, config.scene);
  const PreparedPair& pair = ps.pairs.front();
  ParamStore store;
  init_model(store, config.model, seed);

  QuerySelection selection;
  Assignment assignment;
  {
    Graph g;
    const ForwardResult f = forward(g, store, config.model, ps.pyramid, pair.text);
    selection = f.selection;
    assignment = pair_loss(g, store, config.model, f, pair.text, pair.target, config.loss).assignment;
  }
  auto loss = [&](Graph& g, const ParamStore& s) {
    const ForwardResult f = forward(g, s, config.model, ps.pyramid, pair.text, &selection);
    return pair_loss(g, s, config.model, f, pair.text, pair.target, config.loss, &assignment).total;
  };
  return grad_check_params(loss, store, kGradEps, paths, stride);
}

}  // namespace cadgd
