#include "cadgd/train.hpp"

#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>

#include "cadgd/ops.hpp"
#include "cadgd/random.hpp"

namespace cadgd {

PreparedScene prepare_scene(const Scene& scene, const Vocab& vocab, const SceneConfig& config) {
  PreparedScene p;
  p.scene = &scene;
  p.pyramid = render_features(scene, vocab, config, scene.seed);
  for (std::size_t e = 0; e < scene.expressions.size(); ++e) {
    p.pairs.push_back({e, embed_expression(scene.expressions[e], vocab),
                       make_target(scene, scene.expressions[e], vocab, config.kernel_size)});
  }
  return p;
}

void AdamW::step(ParamStore& store, double lr) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  store.for_each([&](const std::string& path, Tensor& value, const Tensor& grad) {
    auto it = moments_.find(path);
    if (it == moments_.end()) {
      it = moments_.emplace(path, std::pair{Tensor(value.shape()), Tensor(value.shape())}).first;
    }
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
      value[i] -= lr * (update + config_.weight_decay * value[i]);
    }
  });
}

double learning_rate_at(const TrainConfig& config, int epoch) {
  const int decay = config.decay_epoch > 0 ? config.decay_epoch : (config.epochs + 1) / 2;
  return epoch >= decay ? config.learning_rate * config.decay_factor : config.learning_rate;
}

std::string format_step(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%d\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g", r.step, r.epoch,
                r.loss.match, r.loss.cls, r.loss.contrast, r.loss.density, r.loss.loc, r.loss.total);
  return buf;
}

void train_model(const Config& config, const Vocab& vocab, const std::vector<Scene>& scenes,
                 ParamStore& store, const StepCallback& on_step) {
  validate(config);
  std::vector<PreparedScene> prepared;
  prepared.reserve(scenes.size());
  for (const Scene& s : scenes) {
    if (!s.expressions.empty()) prepared.push_back(prepare_scene(s, vocab, config.scene));
  }
  AdamW opt(config.train);
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
    std::vector<std::size_t> order(prepared.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(Rng::derive(config.train.seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1))]);
    }
    const double lr = learning_rate_at(config.train, epoch);
    for (std::size_t idx : order) {
      const PreparedScene& ps = prepared[idx];
      store.zero_grad();
      const double share = 1.0 / static_cast<double>(ps.pairs.size());
      double parts[4] = {0, 0, 0, 0};
      for (const PreparedPair& pair : ps.pairs) {
        Graph g;
        auto diverged = [&](const std::string& what) {
          return std::runtime_error("non-finite loss at step " + std::to_string(step) + " (scene " +
                                    std::to_string(ps.scene->id) + "): " + what);
        };
        std::optional<PairLoss> pl;
        try {
          const ForwardResult fwd = forward(g, store, config.model, ps.pyramid, pair.text);
          pl = pair_loss(g, store, config.model, fwd, pair.text, pair.target, config.loss);
        } catch (const std::domain_error& e) {
          throw diverged(e.what());
        }
        if (!std::isfinite(pl->report.total)) throw diverged("total");
        g.backward(scale(pl->total, share));
        g.accumulate_into(store);
        parts[0] += share * pl->report.match;
        parts[1] += share * pl->report.cls;
        parts[2] += share * pl->report.contrast;
        parts[3] += share * pl->report.density;
      }
      opt.step(store, lr);
      if (on_step) {
        on_step({step, epoch, ps.scene->id,
                 total_loss(parts[0], parts[1], parts[2], parts[3], config.loss)});
      }
      ++step;
    }
  }
}

}  // namespace cadgd
