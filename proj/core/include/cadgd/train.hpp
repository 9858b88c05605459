#pragma once

// Training loop: one optimizer step per scene over all of its expressions.

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cadgd/config.hpp"
#include "cadgd/model.hpp"
#include "cadgd/params.hpp"
#include "cadgd/scene.hpp"

namespace cadgd {

struct PreparedPair {
  std::size_t expression = 0;
  TextFeatures text;
  PairTarget target;
};

// Features and targets of a scene, computed once and reused every epoch.
struct PreparedScene {
  const Scene* scene = nullptr;
  FeaturePyramid pyramid;
  std::vector<PreparedPair> pairs;
};

PreparedScene prepare_scene(const Scene& scene, const Vocab& vocab, const SceneConfig& config);

// Adam moments with decoupled weight decay.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& config) : config_(config) {}
  void step(ParamStore& store, double learning_rate);
  long steps() const { return t_; }

 private:
  TrainConfig config_;
  long t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

double learning_rate_at(const TrainConfig& config, int epoch);

struct StepRecord {
  std::size_t step = 0;
  int epoch = 0;
  int scene_id = 0;
  LossReport loss;  // mean over the scene's expressions
};

// Tab-separated: step, epoch, match, cls, contrast, density, loc, total.
std::string format_step(const StepRecord& record);
inline constexpr const char* kMetricsHeader = "step\tepoch\tmatch\tcls\tcontrast\tdensity\tloc\ttotal";

using StepCallback = std::function<void(const StepRecord&)>;

// Trains `store` (already initialised for config.model) in place. Throws
// std::runtime_error naming the step if a loss becomes non-finite.
void train_model(const Config& config, const Vocab& vocab, const std::vector<Scene>& scenes,
                 ParamStore& store, const StepCallback& on_step = {});

}  // namespace cadgd
