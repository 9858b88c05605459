#pragma once

// Bipartite matching and the localization / density objective.

#include <cstddef>
#include <utility>
#include <vector>

#include "cadgd/graph.hpp"
#include "cadgd/params.hpp"
#include "cadgd/random.hpp"

namespace cadgd {

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (query, gt), by query
  std::vector<std::size_t> unmatched;                      // queries without a gt
  double total_cost = 0.0;                                 // summed in query order
};

// Minimum-cost one-to-one assignment of min(K, G) pairs for a [K, G] cost.
Assignment hungarian_match(const Tensor& cost);

struct LossWeights {
  double lambda1 = 5.0;   // classification
  double lambda2 = 0.06;  // contrastive
  double alpha = 1.0;     // density
};

inline constexpr double kProbabilityClamp = 1e-7;

// cost[k][j] = |p_k - g_j|_1 + lambda1 * (1 - mean over non-pad tokens of probs[k]).
Tensor matching_cost(const Tensor& points, const Tensor& probs, const Tensor& gt_points,
                     const std::vector<bool>& non_pad, double lambda1);

// Mean L1 distance over matched pairs; 0 when nothing is matched.
Var match_loss(Var points, const Assignment& assignment, const Tensor& gt_points);

// Binary cross-entropy of sigmoid(logits) averaged over non-pad tokens, then
// over all queries. Matched queries target 1 on every non-pad token, the rest 0.
Var cls_loss(Var logits, const Assignment& assignment, const std::vector<bool>& non_pad);

// "heads/contrast" projection.
void init_contrast_head(ParamStore& store, Rng& rng, std::size_t channels);

// -(1/K') sum over matched queries of log s_pos + log(1 - s_neg) with
// s = sigmoid(<Linear(content), e> / sqrt(C)); 0 when nothing is matched.
Var contrastive_loss(Graph& g, const ParamStore& store, Var contents,
                     const Assignment& assignment, const Tensor& positive,
                     const Tensor& negative);

struct LossReport {
  double match = 0.0;
  double cls = 0.0;
  double contrast = 0.0;
  double density = 0.0;
  double loc = 0.0;
  double total = 0.0;
  LossWeights weights;
};

// loc = match + lambda1 cls + lambda2 contrast; total = loc + alpha density.
LossReport total_loss(double match, double cls, double contrast, double density,
                      const LossWeights& weights = {});

// Graph version of the same weighted sum. `density` may be invalid (absent).
Var weighted_total(Var match, Var cls, Var contrast, Var density, const LossWeights& weights);

}  // namespace cadgd
