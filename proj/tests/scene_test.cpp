#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "cadgd/random.hpp"
#include "cadgd/scene.hpp"
#include "support/oracles.hpp"

namespace cadgd {
namespace {

namespace fs = std::filesystem;

SceneObject object_at(double x, double y, int class_id, std::vector<int> attributes,
                      double scale = 4.0) {
  SceneObject o;
  o.x = x;
  o.y = y;
  o.class_id = class_id;
  o.attributes = std::move(attributes);
  o.scale = scale;
  return o;
}

Scene blank_scene(int w = 64, int h = 64) {
  Scene s;
  s.width = w;
  s.height = h;
  return s;
}

// Full-resolution splat followed by block summation, written independently
// of the library's windowed accumulation.
Tensor density_oracle(const Scene& scene, const Expression& expr, std::size_t rows, std::size_t cols) {
  const int k = 15, half = 7;
  const double sigma = k / 4.0;
  std::vector<double> full(static_cast<std::size_t>(scene.width * scene.height), 0.0);
  for (const SceneObject& o : scene.objects) {
    if (o.class_id != expr.class_id) continue;
    if (!std::includes(o.attributes.begin(), o.attributes.end(), expr.attributes.begin(),
                       expr.attributes.end())) {
      continue;
    }
    const int cx = std::min(std::max(static_cast<int>(o.x), 0), scene.width - 1);
    const int cy = std::min(std::max(static_cast<int>(o.y), 0), scene.height - 1);
    std::vector<double> g(full.size(), 0.0);
    double z = 0.0;
    for (int py = 0; py < scene.height; ++py) {
      for (int px = 0; px < scene.width; ++px) {
        if (std::abs(px - cx) > half || std::abs(py - cy) > half) continue;
        const double d2 = std::pow(px + 0.5 - o.x, 2) + std::pow(py + 0.5 - o.y, 2);
        g[static_cast<std::size_t>(py * scene.width + px)] = std::exp(-d2 / (2 * sigma * sigma));
        z += g[static_cast<std::size_t>(py * scene.width + px)];
      }
    }
    for (std::size_t i = 0; i < full.size(); ++i) full[i] += g[i] / z;
  }
  Tensor out({rows, cols, 1});
  const std::size_t by = static_cast<std::size_t>(scene.height) / rows;
  const std::size_t bx = static_cast<std::size_t>(scene.width) / cols;
  for (std::size_t py = 0; py < static_cast<std::size_t>(scene.height); ++py) {
    for (std::size_t px = 0; px < static_cast<std::size_t>(scene.width); ++px) {
      out[(py / by) * cols + px / bx] += full[py * static_cast<std::size_t>(scene.width) + px];
    }
  }
  return out;
}

TEST(Vocab, UnitRowsAndRegistry) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  EXPECT_EQ(v.embeddings.dim(0), v.token_count() + 2);
  for (std::size_t r = 0; r < v.embeddings.dim(0); ++r) {
    double n = 0.0;
    for (double x : v.row(r)) n += x * x;
    EXPECT_NEAR(n, 1.0, 1e-12) << "row " << r;
  }
  ASSERT_EQ(v.registry.size(), 2u);
  for (const auto& reg : v.registry) EXPECT_GE(reg.size(), 2u);
  EXPECT_EQ(v.registry, attribute_registry(cfg));
}

TEST(GenerateScene, EmptyRange) {
  SceneConfig cfg;
  cfg.min_objects = cfg.max_objects = 0;
  const Vocab v = make_vocab(cfg);
  const Scene s = generate_scene(cfg, v, 3);
  EXPECT_TRUE(s.objects.empty());
  EXPECT_FALSE(s.expressions.empty());
}

TEST(GenerateScene, DeterministicForSeed) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  EXPECT_EQ(scene_to_json_line(generate_scene(cfg, v, 42, 1)),
            scene_to_json_line(generate_scene(cfg, v, 42, 1)));
  EXPECT_NE(scene_to_json_line(generate_scene(cfg, v, 42, 1)),
            scene_to_json_line(generate_scene(cfg, v, 43, 1)));
}

TEST(GenerateScene, MeanCountMatchesUniformRange) {
  SceneConfig cfg;
  cfg.min_objects = 5;
  cfg.max_objects = 20;
  const Vocab v = make_vocab(cfg);
  double total = 0.0;
  for (std::uint64_t s = 0; s < 1000; ++s) total += static_cast<double>(generate_scene(cfg, v, s).objects.size());
  const double mean = total / 1000.0;
  EXPECT_GE(mean, 11.0);
  EXPECT_LE(mean, 14.0);
}

TEST(GenerateScene, ObjectInvariants) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Scene s = generate_scene(cfg, v, seed);
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const SceneObject& o = s.objects[i];
      EXPECT_GE(o.x, 0.0);
      EXPECT_LT(o.x, s.width);
      EXPECT_GE(o.y, 0.0);
      EXPECT_LT(o.y, s.height);
      ASSERT_FALSE(o.attributes.empty());
      EXPECT_TRUE(std::is_sorted(o.attributes.begin(), o.attributes.end()));
      for (std::size_t j = i + 1; j < s.objects.size(); ++j) {
        EXPECT_GE(std::hypot(o.x - s.objects[j].x, o.y - s.objects[j].y), 8.0);
      }
    }
    EXPECT_LE(s.expressions.size(), 4u);
    for (const Expression& e : s.expressions) {
      ASSERT_EQ(e.tokens.size(), cfg.max_tokens);
      EXPECT_EQ(e.tokens[0].role, TokenRole::cls);
      EXPECT_EQ(std::count_if(e.tokens.begin(), e.tokens.end(),
                              [](const Token& t) { return t.role == TokenRole::cls; }),
                1);
    }
  }
}

TEST(GenerateScene, InfeasibleSeparationThrows) {
  SceneConfig cfg;
  cfg.min_objects = cfg.max_objects = 60;
  cfg.min_separation_cells = 4.0;
  const Vocab v = make_vocab(cfg);
  EXPECT_THROW(generate_scene(cfg, v, 1), std::runtime_error);
}

TEST(SceneConfig, RejectsBadImageSize) {
  SceneConfig cfg;
  cfg.image_width = 48;
  EXPECT_THROW(validate(cfg), std::invalid_argument);
  EXPECT_THROW(pyramid_shapes(48, 64), std::invalid_argument);
}

TEST(EmbedExpression, ShapesAndLookup) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  const Expression short_expr = make_expression(1, {}, v, 2);
  const TextFeatures t = embed_expression(short_expr, v);
  EXPECT_EQ(t.features.dim(0), 2u);
  EXPECT_EQ(t.roles[0], TokenRole::cls);
  EXPECT_EQ(t.roles[1], TokenRole::object_class);

  const TextFeatures a = embed_expression(make_expression(0, {0}, v, 4), v);
  const TextFeatures b = embed_expression(make_expression(0, {1}, v, 4), v);
  // Token layout: CLS, attribute, class, pad.
  double attr_diff = 0.0;
  for (std::size_t c = 0; c < v.channels(); ++c) {
    EXPECT_EQ(a.features.at(2, c), b.features.at(2, c));
    EXPECT_EQ(a.features.at(3, c), 0.0);
    attr_diff += std::fabs(a.features.at(1, c) - b.features.at(1, c));
  }
  EXPECT_GT(attr_diff, 0.1);
  EXPECT_EQ(a.roles[3], TokenRole::pad);
  EXPECT_EQ(a.non_pad_count(), 3u);
}

TEST(EmbedExpression, UnknownVocabIdThrows) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  Expression e = make_expression(0, {0}, v, 4);
  e.tokens[1].vocab_id = 999;
  EXPECT_THROW(embed_expression(e, v), std::out_of_range);
}

TEST(RenderFeatures, LevelShapes) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  const FeaturePyramid p = render_features(generate_scene(cfg, v, 1), v, cfg, 1);
  ASSERT_EQ(p.levels.size(), 4u);
  const std::size_t sides[] = {16, 8, 4, 2};
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_EQ(p.levels[l].shape(), (Shape{sides[l], sides[l], cfg.channels}));
  }
  EXPECT_EQ(p.cell_count(), 340u);
}

TEST(RenderFeatures, EmptyNoiselessSceneIsZero) {
  SceneConfig cfg;
  cfg.noise = 0.0;
  const Vocab v = make_vocab(cfg);
  const FeaturePyramid p = render_features(blank_scene(), v, cfg, 5);
  for (const Tensor& l : p.levels) {
    for (double x : l.data()) EXPECT_EQ(x, 0.0);
  }
}

TEST(RenderFeatures, SingleObjectPeaksAtItsCell) {
  SceneConfig cfg;
  cfg.noise = 0.0;
  const Vocab v = make_vocab(cfg);
  for (auto [x, y] : std::vector<std::pair<double, double>>{{30.2, 33.9}, {10.0, 50.5}, {61.0, 2.0}}) {
    Scene s = blank_scene();
    s.objects.push_back(object_at(x, y, 0, {0, 1}));
    const Tensor& l0 = render_features(s, v, cfg, 1).levels[0];
    std::size_t best = 0;
    double best_norm = -1.0;
    for (std::size_t cell = 0; cell < 256; ++cell) {
      double n = 0.0;
      for (std::size_t c = 0; c < cfg.channels; ++c) n += l0[cell * cfg.channels + c] * l0[cell * cfg.channels + c];
      if (n > best_norm) {
        best_norm = n;
        best = cell;
      }
    }
    EXPECT_EQ(best, static_cast<std::size_t>(y / 4) * 16 + static_cast<std::size_t>(x / 4));
  }
}

TEST(RenderFeatures, DeterministicForSeed) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  const Scene s = generate_scene(cfg, v, 9);
  const FeaturePyramid a = render_features(s, v, cfg, 9), b = render_features(s, v, cfg, 9);
  for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(a.levels[l], b.levels[l]);
}

TEST(GtDensity, EmptySelectionIsZero) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  Scene s = blank_scene();
  s.objects.push_back(object_at(20, 20, 1, {1}));
  const Tensor m = gt_density_map(s, make_expression(0, {0}, v, 4), 16, 16);
  for (double x : m.data()) EXPECT_EQ(x, 0.0);
}

TEST(GtDensity, SingleInteriorObjectSumsToOne) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  Scene s = blank_scene();
  s.objects.push_back(object_at(31.3, 30.8, 0, {0, 2}));
  EXPECT_NEAR(gt_density_map(s, make_expression(0, {0}, v, 4), 16, 16).sum(), 1.0, 1e-9);
}

TEST(GtDensity, SevenObjectsConserveMass) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  Scene s = blank_scene();
  for (int i = 0; i < 7; ++i) s.objects.push_back(object_at(9.5 + 7.0 * i, 12.0 + 6.0 * i, 1, {1, 2}));
  const Expression e = make_expression(1, {2}, v, 4);
  EXPECT_NEAR(gt_density_map(s, e, 16, 16).sum(), 7.0, 1e-6);
}

TEST(GtDensity, MatchesFullResolutionOracle) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = generate_scene(cfg, v, seed);
    for (const Expression& e : s.expressions) {
      for (std::size_t side : {16u, 8u, 64u}) {
        EXPECT_LT(oracle::max_abs_diff(gt_density_map(s, e, side, side), density_oracle(s, e, side, side)), 1e-12);
      }
    }
  }
}

TEST(GtDensity, BoundaryObjectsStillCountOne) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  Scene s = blank_scene();
  s.objects.push_back(object_at(0.2, 0.3, 0, {0}));
  s.objects.push_back(object_at(63.9, 40.0, 0, {0}));
  EXPECT_NEAR(gt_density_map(s, make_expression(0, {0}, v, 4), 16, 16).sum(), 2.0, 1e-12);
}

TEST(GtDensity, EvenKernelRejected) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  EXPECT_THROW(gt_density_map(blank_scene(), make_expression(0, {0}, v, 4), 16, 16, 14),
               std::invalid_argument);
}

TEST(GtDensity, DisjointAttributesOverlapOnlyOnSharedObjects) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  Scene s = blank_scene();
  s.objects.push_back(object_at(8, 8, 0, {0}));
  s.objects.push_back(object_at(56, 56, 0, {1}));
  const Expression e0 = make_expression(0, {0}, v, 4), e1 = make_expression(0, {1}, v, 4);
  auto overlap = [&](const Scene& sc) {
    const Tensor a = gt_density_map(sc, e0, 16, 16), b = gt_density_map(sc, e1, 16, 16);
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) n += a[i] > 0 && b[i] > 0;
    return n;
  };
  EXPECT_EQ(overlap(s), 0u);
  s.objects.push_back(object_at(8, 56, 0, {0, 1}));
  EXPECT_GT(overlap(s), 0u);
}

TEST(Refers, ConjunctiveSemantics) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  const SceneObject o = object_at(1, 1, 0, {0, 2});
  EXPECT_TRUE(refers_to(make_expression(0, {0}, v, 4), o));
  EXPECT_TRUE(refers_to(make_expression(0, {0, 2}, v, 4), o));
  EXPECT_FALSE(refers_to(make_expression(0, {0, 1}, v, 4), o));
  EXPECT_FALSE(refers_to(make_expression(1, {0}, v, 4), o));
}

TEST(QuadrantScene, PartitionsObjects) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Scene s = generate_scene(cfg, v, seed);
    std::size_t total = 0;
    for (int q = 0; q < 4; ++q) {
      const Scene part = quadrant_scene(s, q);
      EXPECT_EQ(part.width, 32);
      for (const SceneObject& o : part.objects) {
        EXPECT_GE(o.x, 0.0);
        EXPECT_LT(o.x, 32.0);
      }
      total += part.objects.size();
    }
    EXPECT_EQ(total, s.objects.size());
  }
  EXPECT_THROW(quadrant_scene(blank_scene(32, 32), 0), std::invalid_argument);
}

TEST(SceneFile, JsonRoundTrip) {
  SceneConfig cfg;
  const Vocab v = make_vocab(cfg);
  std::vector<Scene> scenes;
  for (int i = 0; i < 5; ++i) scenes.push_back(generate_scene(cfg, v, 100 + i, i));
  const fs::path path = fs::temp_directory_path() / "cadgd_scene_roundtrip.jsonl";
  write_scenes(path, scenes);
  const std::vector<Scene> back = read_scenes(path, v, cfg.max_tokens);
  ASSERT_EQ(back.size(), scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    EXPECT_EQ(scene_to_json_line(back[i]), scene_to_json_line(scenes[i]));
    ASSERT_EQ(back[i].objects.size(), scenes[i].objects.size());
    for (std::size_t k = 0; k < back[i].objects.size(); ++k) {
      EXPECT_EQ(back[i].objects[k].x, scenes[i].objects[k].x);
    }
  }
  fs::remove(path);
}

TEST(Pgm, HeaderAndScaling) {
  const fs::path path = fs::temp_directory_path() / "cadgd_map.pgm";
  Tensor m({2, 3, 1}, {0.0, 1.0, 2.0, 4.0, 0.5, 0.0});
  write_pgm(path, m);
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  in.get();
  std::vector<unsigned char> px(6);
  in.read(reinterpret_cast<char*>(px.data()), 6);
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, 3);
  EXPECT_EQ(h, 2);
  EXPECT_EQ(maxv, 255);
  EXPECT_EQ(px[3], 255);
  EXPECT_EQ(px[0], 0);
  fs::remove(path);
}

}  // namespace
}  // namespace cadgd
