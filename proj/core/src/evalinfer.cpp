#include "cadgd/evalinfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cadgd/kernels.hpp"
#include "cadgd/losses.hpp"

namespace cadgd {

Tensor PredictionSet::probabilities() const { return kernels::sigmoid(logits); }

std::vector<std::size_t> threshold_select(const PredictionSet& pred, double cls_threshold,
                                          double token_threshold) {
  const Tensor p = pred.probabilities();
  const std::size_t k = p.dim(0), n = p.dim(1);
  if (pred.roles.size() != n || n == 0 || pred.roles[0] != TokenRole::cls) {
    throw std::invalid_argument("threshold_select expects token 0 to be CLS");
  }
  std::vector<std::size_t> kept;
  for (std::size_t q = 0; q < k; ++q) {
    bool keep = p.at(q, 0) >= cls_threshold;
    for (std::size_t i = 1; i < n && keep; ++i) {
      if (pred.roles[i] != TokenRole::pad && p.at(q, i) < token_threshold) keep = false;
    }
    if (keep) kept.push_back(q);
  }
  return kept;
}

std::size_t guided_count(double density_sum, std::size_t queries) {
  if (!std::isfinite(density_sum)) throw std::domain_error("non-finite density sum");
  const double r = std::round(density_sum);  // halves go away from zero
  if (r <= 0.0) return 0;
  return std::min(queries, static_cast<std::size_t>(r));
}

std::vector<std::size_t> density_guided_select(const PredictionSet& pred, const Tensor& density) {
  const Tensor p = pred.probabilities();
  const std::size_t k = p.dim(0);
  const std::size_t n = guided_count(density.sum(), k);
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p.at(a, 0) > p.at(b, 0); });
  order.resize(n);
  return order;
}

CountMetrics count_metrics(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("count metrics need at least one pair");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (auto [pred, gt] : pairs) {
    const double d = pred - gt;
    abs_sum += std::fabs(d);
    sq_sum += d * d;
  }
  const auto n = static_cast<double>(pairs.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

LocalizationMetrics localization_metrics(const Tensor& predicted, const Tensor& truth, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("localization threshold must be positive");
  const std::size_t np = predicted.empty() ? 0 : predicted.dim(0);
  const std::size_t ng = truth.empty() ? 0 : truth.dim(0);
  LocalizationMetrics m;
  if (np > 0 && ng > 0) {
    Tensor dist({np, ng});
    for (std::size_t i = 0; i < np; ++i) {
      for (std::size_t j = 0; j < ng; ++j) {
        dist.at(i, j) = std::hypot(predicted.at(i, 0) - truth.at(j, 0), predicted.at(i, 1) - truth.at(j, 1));
      }
    }
    for (auto [i, j] : hungarian_match(dist).pairs) {
      if (dist.at(i, j) <= tau) ++m.true_positives;
    }
  }
  const auto tp = static_cast<double>(m.true_positives);
  m.precision = np == 0 ? (ng == 0 ? 1.0 : 0.0) : tp / static_cast<double>(np);
  m.recall = ng == 0 ? 1.0 : tp / static_cast<double>(ng);
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

double adaptive_crop_count(const Scene& scene, const std::function<double(const Scene&)>& count,
                           double trigger) {
  if (scene.width % 64 != 0 || scene.height % 64 != 0) {
    throw std::invalid_argument("adaptive cropping needs image sides divisible by 64");
  }
  const double whole = count(scene);
  if (whole <= trigger) return whole;
  double total = 0.0;
  for (int q = 0; q < 4; ++q) total += count(quadrant_scene(scene, q));
  return total;
}

}  // namespace cadgd
