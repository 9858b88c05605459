#include "cadgd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "cadgd/layers.hpp"
#include "cadgd/ops.hpp"

namespace cadgd {
namespace {

// Shortest augmenting path with potentials over an n x m matrix, n <= m.
// Returns for each row its assigned column.
std::vector<std::size_t> assign_rows(const std::vector<double>& a, std::size_t n, std::size_t m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

Var zero_scalar(Var like) { return like.graph().constant(Tensor({1})); }

}  // namespace

Assignment hungarian_match(const Tensor& cost) {
  if (cost.rank() != 2) throw std::invalid_argument("cost matrix must be 2-D");
  require_finite(cost, "hungarian_match cost");
  const std::size_t rows = cost.dim(0), cols = cost.dim(1);
  Assignment out;
  std::vector<std::size_t> match(rows, cols);  // cols == unmatched
  if (rows > 0 && cols > 0) {
    if (rows <= cols) {
      match = assign_rows(cost.values(), rows, cols);
    } else {
      const Tensor t = [&] {
        Tensor tr({cols, rows});
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) tr.at(c, r) = cost.at(r, c);
        }
        return tr;
      }();
      const auto col_to_row = assign_rows(t.values(), cols, rows);
      for (std::size_t c = 0; c < cols; ++c) match[col_to_row[c]] = c;
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (match[r] == cols) {
      out.unmatched.push_back(r);
    } else {
      out.pairs.emplace_back(r, match[r]);
      out.total_cost += cost.at(r, match[r]);
    }
  }
  return out;
}

Tensor matching_cost(const Tensor& points, const Tensor& probs, const Tensor& gt_points,
                     const std::vector<bool>& non_pad, double lambda1) {
  const std::size_t k = points.dim(0), g = gt_points.dim(0), n = probs.dim(1);
  if (probs.dim(0) != k || non_pad.size() != n) throw std::invalid_argument("matching_cost shapes");
  Tensor cost({k, g});
  const auto active = static_cast<double>(std::count(non_pad.begin(), non_pad.end(), true));
  for (std::size_t q = 0; q < k; ++q) {
    double mean_prob = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (non_pad[i]) mean_prob += probs.at(q, i);
    }
    mean_prob = active > 0 ? mean_prob / active : 0.0;
    for (std::size_t j = 0; j < g; ++j) {
      const double l1 = std::fabs(points.at(q, 0) - gt_points.at(j, 0)) +
                        std::fabs(points.at(q, 1) - gt_points.at(j, 1));
      cost.at(q, j) = l1 + lambda1 * (1.0 - mean_prob);
    }
  }
  return cost;
}

Var match_loss(Var points, const Assignment& assignment, const Tensor& gt_points) {
  if (assignment.pairs.empty()) return zero_scalar(points);
  std::vector<std::size_t> rows;
  Tensor targets({assignment.pairs.size(), 2});
  for (std::size_t i = 0; i < assignment.pairs.size(); ++i) {
    const auto [q, j] = assignment.pairs[i];
    rows.push_back(q);
    targets.at(i, 0) = gt_points.at(j, 0);
    targets.at(i, 1) = gt_points.at(j, 1);
  }
  Var diff = sub(gather_rows(points, rows), points.graph().constant(std::move(targets)));
  return scale(sum(abs(diff)), 1.0 / static_cast<double>(assignment.pairs.size()));
}

Var cls_loss(Var logits, const Assignment& assignment, const std::vector<bool>& non_pad) {
  const std::size_t k = logits.shape().at(0), n = logits.shape().at(1);
  if (non_pad.size() != n) throw std::invalid_argument("cls_loss mask length");
  const auto active = static_cast<double>(std::count(non_pad.begin(), non_pad.end(), true));
  if (active == 0 || k == 0) return zero_scalar(logits);
  Tensor target({k, n}), weight({k, n});
  for (std::size_t q = 0; q < k; ++q) {
    for (std::size_t i = 0; i < n; ++i) {
      if (non_pad[i]) weight.at(q, i) = 1.0 / (active * static_cast<double>(k));
    }
  }
  for (const auto& pr : assignment.pairs) {
    for (std::size_t i = 0; i < n; ++i) target.at(pr.first, i) = non_pad[i] ? 1.0 : 0.0;
  }
  Graph& g = logits.graph();
  Var p = clamp(sigmoid(logits), kProbabilityClamp, 1.0 - kProbabilityClamp);
  Var y = g.constant(target);
  Tensor one_minus_target = target;
  for (double& v : one_minus_target.data()) v = 1.0 - v;
  Var ll = add(mul(y, log(p)), mul(g.constant(one_minus_target), log(add_scalar(scale(p, -1.0), 1.0))));
  return scale(sum(mul(ll, g.constant(std::move(weight)))), -1.0);
}

void init_contrast_head(ParamStore& store, Rng& rng, std::size_t channels) {
  add_linear(store, rng, "heads/contrast", channels, channels);
}

Var contrastive_loss(Graph& g, const ParamStore& store, Var contents,
                     const Assignment& assignment, const Tensor& positive,
                     const Tensor& negative) {
  if (assignment.pairs.empty()) return zero_scalar(contents);
  const std::size_t c = contents.shape().back();
  if (positive.size() != c || negative.size() != c) {
    throw std::invalid_argument("contrastive embeddings must have C elements");
  }
  std::vector<std::size_t> rows;
  for (const auto& pr : assignment.pairs) rows.push_back(pr.first);
  Var proj = apply_linear(g, store, "heads/contrast", gather_rows(contents, rows));
  const double inv = 1.0 / std::sqrt(static_cast<double>(c));
  auto prob = [&](const Tensor& e) {
    Var s = sigmoid(scale(matmul(proj, g.constant(e.reshaped({c, 1}))), inv));
    return clamp(s, kProbabilityClamp, 1.0 - kProbabilityClamp);
  };
  Var sp = prob(positive), sn = prob(negative);
  Var ll = add(log(sp), log(add_scalar(scale(sn, -1.0), 1.0)));
  return scale(sum(ll), -1.0 / static_cast<double>(rows.size()));
}

LossReport total_loss(double match, double cls, double contrast, double density,
                      const LossWeights& weights) {
  for (double v : {match, cls, contrast, density}) {
    if (!std::isfinite(v)) throw std::domain_error("non-finite loss part");
  }
  LossReport r;
  r.weights = weights;
  r.match = match;
  r.cls = cls;
  r.contrast = contrast;
  r.density = density;
  r.loc = match + weights.lambda1 * cls + weights.lambda2 * contrast;
  r.total = r.loc + weights.alpha * density;
  return r;
}

Var weighted_total(Var match, Var cls, Var contrast, Var density, const LossWeights& weights) {
  Var loc = add(add(match, scale(cls, weights.lambda1)), scale(contrast, weights.lambda2));
  return density.valid() ? add(loc, scale(density, weights.alpha)) : loc;
}

}  // namespace cadgd
