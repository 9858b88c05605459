#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "cadgd/cadgen.hpp"
#include "cadgd/evalinfer.hpp"
#include "cadgd/random.hpp"
#include "cadgd/scene.hpp"
#include "support/oracles.hpp"

namespace cadgd {
namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

// Roles: CLS, class, attribute, pad.
PredictionSet make_prediction(const std::vector<std::vector<double>>& probs) {
  PredictionSet p;
  p.roles = {TokenRole::cls, TokenRole::object_class, TokenRole::attribute, TokenRole::pad};
  p.logits = Tensor({probs.size(), 4});
  p.points = Tensor({probs.size(), 2}, 0.5);
  for (std::size_t q = 0; q < probs.size(); ++q) {
    for (std::size_t i = 0; i < 4; ++i) p.logits.at(q, i) = logit(probs[q][i]);
  }
  return p;
}

TEST(ThresholdSelect, AndRule) {
  const PredictionSet p = make_prediction({
      {0.3, 0.4, 0.4, 0.01},   // kept, pad ignored
      {0.2, 0.99, 0.99, 0.99}, // CLS too low
      {0.9, 0.34, 0.9, 0.9},   // one token too low
      {0.9, 0.9, 0.34, 0.9},
      {0.25, 0.35, 0.35, 0.0001},
  });
  EXPECT_EQ(threshold_select(p), (std::vector<std::size_t>{0, 4}));
  EXPECT_EQ(threshold_select(p, 0.1, 0.1), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(ThresholdSelect, MatchesDirectOracle) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    PredictionSet p;
    p.roles = {TokenRole::cls, TokenRole::object_class, TokenRole::attribute, TokenRole::attribute, TokenRole::pad};
    p.logits = rng.normal_tensor({7, 5}, 2.0);
    const Tensor prob = p.probabilities();
    std::vector<std::size_t> expect;
    for (std::size_t q = 0; q < 7; ++q) {
      if (prob.at(q, 0) >= 0.25 && prob.at(q, 1) >= 0.35 && prob.at(q, 2) >= 0.35 && prob.at(q, 3) >= 0.35) {
        expect.push_back(q);
      }
    }
    EXPECT_EQ(threshold_select(p), expect);
  }
}

TEST(ThresholdSelect, RequiresLeadingCls) {
  PredictionSet p = make_prediction({{0.5, 0.5, 0.5, 0.5}});
  p.roles[0] = TokenRole::attribute;
  EXPECT_THROW(threshold_select(p), std::invalid_argument);
}

TEST(GuidedCount, RoundingAndClamp) {
  EXPECT_EQ(guided_count(0.2, 10), 0u);
  EXPECT_EQ(guided_count(4.3, 10), 4u);
  EXPECT_EQ(guided_count(4.5, 10), 5u);
  EXPECT_EQ(guided_count(0.5, 10), 1u);
  EXPECT_EQ(guided_count(-3.0, 10), 0u);
  EXPECT_EQ(guided_count(250.0, 100), 100u);
  EXPECT_THROW(guided_count(std::nan(""), 3), std::domain_error);
}

TEST(DensityGuidedSelect, TopByClsWithIndexTies) {
  const PredictionSet p = make_prediction({
      {0.1, 0.5, 0.5, 0.5}, {0.8, 0.5, 0.5, 0.5}, {0.6, 0.5, 0.5, 0.5},
      {0.8, 0.5, 0.5, 0.5}, {0.7, 0.5, 0.5, 0.5}, {0.05, 0.5, 0.5, 0.5},
  });
  EXPECT_TRUE(density_guided_select(p, Tensor({2, 2, 1}, 0.05)).empty());
  Tensor d({2, 2, 1}, {1.0, 1.0, 2.0, 0.3});
  EXPECT_EQ(density_guided_select(p, d), (std::vector<std::size_t>{1, 3, 4, 2}));
  EXPECT_EQ(density_guided_select(p, Tensor({1, 1, 1}, 1e3)).size(), 6u);
}

TEST(DensityGuidedSelect, EmitsRoundedDensityCountAgainstSortOracle) {
  Rng rng(2);
  for (int t = 0; t < 300; ++t) {
    PredictionSet p;
    p.roles = {TokenRole::cls, TokenRole::attribute};
    const auto k = static_cast<std::size_t>(rng.integer(1, 12));
    p.logits = rng.normal_tensor({k, 2}, 1.5);
    const Tensor density = rng.uniform_tensor({3, 3, 1}, 0.0, 2.0);
    const std::vector<std::size_t> sel = density_guided_select(p, density);
    const auto n = static_cast<std::size_t>(std::clamp(std::floor(density.sum() + 0.5), 0.0, static_cast<double>(k)));
    ASSERT_EQ(sel.size(), n);
    const Tensor prob = p.probabilities();
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return prob.at(a, 0) != prob.at(b, 0) ? prob.at(a, 0) > prob.at(b, 0) : a < b;
    });
    order.resize(n);
    EXPECT_EQ(sel, order);
  }
}

TEST(CountMetrics, WorkedCases) {
  const CountMetrics same = count_metrics({{3, 3}, {0, 0}});
  EXPECT_EQ(same.mae, 0.0);
  EXPECT_EQ(same.rmse, 0.0);
  const CountMetrics a = count_metrics({{3, 4}, {5, 4}});
  EXPECT_EQ(a.mae, 1.0);
  EXPECT_EQ(a.rmse, 1.0);
  const CountMetrics b = count_metrics({{0, 0}, {10, 0}});
  EXPECT_EQ(b.mae, 5.0);
  EXPECT_NEAR(b.rmse, 7.0711, 1e-4);
  EXPECT_THROW(count_metrics({}), std::invalid_argument);
}

TEST(CountMetrics, MaeNeverExceedsRmse) {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::pair<double, double>> pairs;
    const auto n = rng.integer(1, 20);
    for (std::int64_t i = 0; i < n; ++i) pairs.push_back({rng.integer(0, 30), rng.integer(0, 30)});
    const CountMetrics m = count_metrics(pairs);
    EXPECT_LE(m.mae, m.rmse + 1e-12 * (1.0 + m.rmse));
  }
}

TEST(LocalizationMetrics, WorkedCases) {
  const Tensor gt({2, 2}, {10.0, 10.0, 40.0, 40.0});
  const LocalizationMetrics exact = localization_metrics(gt, gt, 15.0);
  EXPECT_EQ(exact.precision, 1.0);
  EXPECT_EQ(exact.recall, 1.0);
  EXPECT_EQ(exact.f1, 1.0);

  const LocalizationMetrics half =
      localization_metrics(Tensor({2, 2}, {12.0, 10.0, 60.0, 5.0}), Tensor({1, 2}, {10.0, 10.0}), 15.0);
  EXPECT_EQ(half.precision, 0.5);
  EXPECT_EQ(half.recall, 1.0);
  EXPECT_NEAR(half.f1, 0.6667, 1e-4);

  const LocalizationMetrics none = localization_metrics(Tensor({0, 2}), gt, 15.0);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.recall, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_EQ(localization_metrics(Tensor({0, 2}), Tensor({0, 2}), 15.0).precision, 1.0);
  EXPECT_THROW(localization_metrics(gt, gt, 0.0), std::invalid_argument);
}

TEST(LocalizationMetrics, OptimalNotGreedyMatching) {
  // Greedy nearest-first pairs p0 with g0 (distance 1) and leaves p1 3.3 from
  // g1; the minimum-total assignment puts both pairs within tau.
  const Tensor pred({2, 2}, {0.0, 0.0, 2.1, 0.0});
  const Tensor gt({2, 2}, {1.0, 0.0, -1.2, 0.0});
  const LocalizationMetrics m = localization_metrics(pred, gt, 2.0);
  EXPECT_EQ(m.true_positives, 2u);
}

TEST(LocalizationMetrics, BoundsAndF1Identity) {
  Rng rng(4);
  for (int t = 0; t < 300; ++t) {
    const auto np = static_cast<std::size_t>(rng.integer(0, 6)), ng = static_cast<std::size_t>(rng.integer(0, 6));
    const LocalizationMetrics m =
        localization_metrics(rng.uniform_tensor({np, 2}, 0, 64), rng.uniform_tensor({ng, 2}, 0, 64), 15.0);
    for (double v : {m.precision, m.recall, m.f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    if (m.precision + m.recall > 0.0) {
      EXPECT_DOUBLE_EQ(m.f1, 2 * m.precision * m.recall / (m.precision + m.recall));
    } else {
      EXPECT_EQ(m.f1, 0.0);
    }
  }
}

Scene placed_scene(const std::vector<std::pair<double, double>>& centers) {
  Scene s;
  s.width = s.height = 64;
  for (auto [x, y] : centers) {
    SceneObject o;
    o.x = x;
    o.y = y;
    o.class_id = 0;
    o.attributes = {0};
    s.objects.push_back(o);
  }
  return s;
}

TEST(AdaptiveCrop, BelowTriggerUsesWholeCount) {
  int calls = 0;
  const Scene s = placed_scene({{10, 10}});
  EXPECT_EQ(adaptive_crop_count(s, [&](const Scene&) { ++calls; return 10.0; }), 10.0);
  EXPECT_EQ(calls, 1);
}

TEST(AdaptiveCrop, QuadrantCountsPartitionTheWhole) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  const Expression e = make_expression(0, {0}, v, 4);
  auto density_count_of = [&](const Scene& s) { return density_count(gt_density_map(s, e, s.height / 4, s.width / 4)); };
  const Scene s = placed_scene({{16, 16}, {48, 16}, {20, 44}, {47, 47}, {12, 20}});
  const double whole = density_count_of(s);
  EXPECT_NEAR(adaptive_crop_count(s, density_count_of, 0.0), whole, 1e-9);

  const Scene one = placed_scene({{48, 16}, {40, 20}});
  std::vector<double> per;
  for (int q = 0; q < 4; ++q) per.push_back(density_count_of(quadrant_scene(one, q)));
  EXPECT_NEAR(per[1], 2.0, 1e-9);
  EXPECT_NEAR(per[0] + per[2] + per[3], 0.0, 1e-9);
}

TEST(AdaptiveCrop, IndivisibleSizeRejected) {
  Scene s = placed_scene({});
  s.width = 96;
  EXPECT_THROW(adaptive_crop_count(s, [](const Scene&) { return 0.0; }), std::invalid_argument);
}

}  // namespace
}  // namespace cadgd
