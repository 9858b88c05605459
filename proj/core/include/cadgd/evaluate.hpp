#pragma once

// Runs a trained model over scenes and scores both counting strategies from
// a single forward pass per (scene, expression).

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cadgd/config.hpp"
#include "cadgd/evalinfer.hpp"
#include "cadgd/params.hpp"
#include "cadgd/query.hpp"
#include "cadgd/scene.hpp"

namespace cadgd {

struct PairPrediction {
  PredictionSet prediction;
  Tensor density;  // empty without cadgen
  QuerySelection selection;
  Tensor text_queries;
  Tensor queries;
};

PairPrediction predict_pair(const ModelConfig& config, const ParamStore& store,
                            const FeaturePyramid& pyramid, const TextFeatures& text);

enum class Strategy { threshold, density };
const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& text);

struct StrategyOutcome {
  std::size_t count = 0;
  Tensor points;  // [count, 2] pixels
  LocalizationMetrics localization;
};

struct PairEval {
  int scene_id = 0;
  std::size_t expression = 0;
  std::size_t gt_count = 0;
  double density_sum = 0.0;
  bool cropped = false;
  StrategyOutcome threshold;
  std::optional<StrategyOutcome> density;
};

struct StrategySummary {
  CountMetrics counts;
  double precision = 0.0;  // pooled over pairs
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  std::vector<PairEval> pairs;
  StrategySummary threshold;
  std::optional<StrategySummary> density;
  std::vector<std::string> violations;  // empty when every invariant held
};

EvalReport evaluate(const Config& config, const ParamStore& store, const Vocab& vocab,
                    const std::vector<Scene>& scenes);

// Header, one tab-separated line per pair, then a summary line per strategy
// (only `only` when given).
void write_report(std::ostream& out, const EvalReport& report,
                  std::optional<Strategy> only = std::nullopt);

}  // namespace cadgd
