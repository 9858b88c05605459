#pragma once

// Counting strategies and metrics. Strategies are pure post-processing of one
// set of predictions.

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "cadgd/scene.hpp"
#include "cadgd/tensor.hpp"

namespace cadgd {

struct PredictionSet {
  Tensor points;  // [K, 2] normalized
  Tensor logits;  // [K, N]
  std::vector<TokenRole> roles;

  Tensor probabilities() const;
};

// Keeps query k iff p(CLS) >= cls_threshold and every other non-pad token
// probability is >= token_threshold.
std::vector<std::size_t> threshold_select(const PredictionSet& pred, double cls_threshold = 0.25,
                                          double token_threshold = 0.35);

// round-half-away-from-zero of the density sum, clamped to [0, queries].
std::size_t guided_count(double density_sum, std::size_t queries);

// Top guided_count(sum(density)) queries by CLS probability, ties by index.
std::vector<std::size_t> density_guided_select(const PredictionSet& pred, const Tensor& density);

struct CountMetrics {
  double mae = 0.0;
  double rmse = 0.0;
};

// pairs of (predicted, ground truth); throws on an empty list.
CountMetrics count_metrics(const std::vector<std::pair<double, double>>& pairs);

struct LocalizationMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
};

// Optimal one-to-one matching by Euclidean distance; matched pairs within tau
// are true positives. Points in pixels, [P, 2] and [G, 2].
LocalizationMetrics localization_metrics(const Tensor& predicted, const Tensor& truth, double tau);

// Counts the whole scene; if that count exceeds `trigger`, counts the four
// quadrant scenes instead and returns their sum.
double adaptive_crop_count(const Scene& scene, const std::function<double(const Scene&)>& count,
                           double trigger = 600.0);

}  // namespace cadgd
