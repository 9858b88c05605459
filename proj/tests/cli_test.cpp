#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "cadgd/composite_check.hpp"
#include "cadgd/config.hpp"
#include "cadgd/evaluate.hpp"
#include "cadgd/model.hpp"
#include "cadgd/ops.hpp"
#include "cadgd/params.hpp"
#include "cadgd/random.hpp"
#include "cadgd/train.hpp"
#include "commands.hpp"

namespace cadgd {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cadgd_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Config small_config(int epochs = 1) {
  Config c = parse_config(
      "[data]\ntrain_scenes = 4\nval_scenes = 2\n"
      "[model]\nqueries = 20\n"
      "[train]\nepochs = " + std::to_string(epochs) + "\n");
  return c;
}

std::set<std::string> path_set(const ParamStore& s) {
  const auto p = s.paths();
  return {p.begin(), p.end()};
}

TEST(Config, DefaultsValidAndRoundTrip) {
  const Config c;
  EXPECT_NO_THROW(validate(c));
  EXPECT_EQ(c.loss.lambda1, 5.0);
  EXPECT_EQ(c.loss.lambda2, 0.06);
  EXPECT_EQ(c.loss.alpha, 1.0);
  EXPECT_EQ(c.infer.cls_threshold, 0.25);
  EXPECT_EQ(c.infer.token_threshold, 0.35);
  EXPECT_EQ(c.infer.crop_trigger, 600.0);
  EXPECT_EQ(c.scene.kernel_size, 15);
  const std::string text = config_to_string(c);
  EXPECT_EQ(config_to_string(parse_config(text)), text);

  Config d = small_config();
  d.train.learning_rate = 0.1 + 0.2;  // not exactly representable in short decimal
  d.model.ablation = ablation_row(3);
  EXPECT_EQ(config_to_string(parse_config(config_to_string(d))), config_to_string(d));
  EXPECT_EQ(parse_config(config_to_string(d)).train.learning_rate, d.train.learning_rate);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config("[model]\nchanels = 8\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("[modle]\nchannels = 8\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("[train]\nepochs = many\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("[infer]\ncls_threshold = 1.0\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("[loss]\nlambda1 = -1\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("[scene]\nimage_width = 48\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("[ablation]\ncadgen = false\n"), std::invalid_argument);
  EXPECT_NO_THROW(parse_config("[ablation]\ncadgen = false\nspatial_attn = off\ndensity_init = no\n"));
}

TEST(Ablation, RowsAndParsing) {
  const Ablation r1 = ablation_row(1);
  EXPECT_FALSE(r1.cadgen || r1.spatial_attn || r1.channel_attn || r1.text_init || r1.density_init || r1.density_guided);
  const Ablation r6 = ablation_row(6), r7 = ablation_row(7);
  EXPECT_TRUE(r6.cadgen && r6.spatial_attn && r6.channel_attn && r6.text_init && r6.density_init);
  EXPECT_FALSE(r6.density_guided);
  Ablation r7_training = r7;
  r7_training.density_guided = false;
  EXPECT_EQ(r7_training, r6);
  EXPECT_EQ(parse_ablation("R6"), r6);
  EXPECT_EQ(parse_ablation("none"), r1);
  EXPECT_EQ(parse_ablation(ablation_string(ablation_row(4))), ablation_row(4));
  EXPECT_THROW(parse_ablation("spatial_attn"), std::invalid_argument);
  EXPECT_THROW(parse_ablation("R9"), std::invalid_argument);
}

TEST(Ablation, AllOffHasBaselineParameterSetOnly) {
  ModelConfig off;
  off.ablation = ablation_row(1);
  ParamStore a, b;
  init_model(a, off, 1);
  ModelConfig parsed;
  parsed.ablation = parse_ablation("none");
  init_model(b, parsed, 99);
  EXPECT_EQ(path_set(a), path_set(b));
  for (const std::string& p : a.paths()) {
    EXPECT_NE(p.rfind("cadgen/", 0), 0u) << p;
    EXPECT_NE(p.rfind("cadattn/", 0), 0u) << p;
  }
  ModelConfig full;
  ParamStore f;
  init_model(f, full, 1);
  const auto fp = path_set(f);
  for (const std::string& p : a.paths()) EXPECT_TRUE(fp.count(p)) << p;
  EXPECT_GT(fp.size(), a.paths().size());
}

TEST(ContentHash, MatchesGitBlobHash) {
  EXPECT_EQ(cli::content_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(cli::content_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(Gen, DeterministicAndSplit) {
  Config c;
  const fs::path a = scratch("gen_a"), b = scratch("gen_b"), d = scratch("gen_c");
  cli::cmd_gen(c, 5, a);
  cli::cmd_gen(c, 5, b);
  cli::cmd_gen(c, 6, d);
  for (const char* f : {cli::kTrainFile, cli::kValFile}) {
    EXPECT_EQ(cli::read_file(a / f), cli::read_file(b / f));
    EXPECT_NE(cli::read_file(a / f), cli::read_file(d / f));
  }
  const Vocab v = make_vocab(c.scene);
  const auto train = read_scenes(a / cli::kTrainFile, v, c.scene.max_tokens);
  const auto val = read_scenes(a / cli::kValFile, v, c.scene.max_tokens);
  EXPECT_EQ(train.size(), 160u);
  EXPECT_EQ(val.size(), 40u);
  EXPECT_EQ(train.size() * 5, 4 * (train.size() + val.size()));
  EXPECT_EQ(val.front().id, 160);
}

TEST(Gen, EmptyObjectRange) {
  Config c = parse_config("[scene]\nmin_objects = 0\nmax_objects = 0\n[data]\ntrain_scenes = 5\nval_scenes = 2\n");
  const fs::path out = scratch("gen_empty");
  cli::cmd_gen(c, 1, out);
  const Vocab v = make_vocab(c.scene);
  const auto train = read_scenes(out / cli::kTrainFile, v, c.scene.max_tokens);
  ASSERT_EQ(train.size(), 5u);
  for (const Scene& s : train) {
    EXPECT_TRUE(s.objects.empty());
    for (const Expression& e : s.expressions) EXPECT_TRUE(referred_objects(s, e).empty());
  }
}

TEST(Gen, UnwritablePathRejected) {
  const fs::path file = scratch("gen_unwritable") / "plain";
  std::ofstream(file) << "x";
  EXPECT_THROW(cli::cmd_gen(Config{}, 1, file / "sub"), std::runtime_error);
}

TEST(Train, ZeroEpochsWritesInitialisation) {
  const Config c = small_config(0);
  const fs::path data = scratch("train0_data"), out = scratch("train0_out");
  cli::cmd_gen(c, 3, data);
  const cli::TrainOutputs o = cli::cmd_train(c, 42, data, out);
  ParamStore init;
  init_model(init, c.model, 42);
  const fs::path ref = out / "ref.bin";
  save_checkpoint(init, ref);
  EXPECT_EQ(cli::read_file(o.checkpoint), cli::read_file(ref));
}

TEST(Train, ReproducibleBytesAndManifest) {
  const Config c = small_config(2);
  const fs::path data = scratch("rep_data"), a = scratch("rep_a"), b = scratch("rep_b");
  cli::cmd_gen(c, 3, data);
  const cli::TrainOutputs oa = cli::cmd_train(c, 7, data, a);
  const cli::TrainOutputs ob = cli::cmd_train(c, 7, data, b);
  EXPECT_EQ(cli::read_file(oa.checkpoint), cli::read_file(ob.checkpoint));
  EXPECT_EQ(cli::read_file(oa.metrics), cli::read_file(ob.metrics));
  EXPECT_EQ(cli::read_file(oa.manifest), cli::read_file(ob.manifest));

  std::istringstream log(cli::read_file(oa.metrics));
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, std::string("# manifest ") + cli::kManifestFile);
  std::getline(log, line);
  EXPECT_EQ(line, kMetricsHeader);
  int steps = 0;
  while (std::getline(log, line)) ++steps;
  EXPECT_EQ(steps, 2 * 4);
  const std::string manifest = cli::read_file(oa.manifest);
  EXPECT_NE(manifest.find(cli::kCheckpointFile), std::string::npos);
  EXPECT_NE(manifest.find(cli::kMetricsFile), std::string::npos);

  const fs::path other = scratch("rep_other");
  const cli::TrainOutputs oc = cli::cmd_train(c, 8, data, other);
  EXPECT_NE(cli::read_file(oa.checkpoint), cli::read_file(oc.checkpoint));
}

TEST(Train, NonFiniteLossAbortsWithStep) {
  Config c = small_config(1);
  c.train.learning_rate = 1e300;
  const fs::path data = scratch("nan_data"), out = scratch("nan_out");
  cli::cmd_gen(c, 3, data);
  try {
    cli::cmd_train(c, 1, data, out);
    FAIL() << "expected a non-finite loss";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos) << e.what();
  }
}

TEST(Train, LearningRateSchedule) {
  TrainConfig t;
  t.epochs = 10;
  t.learning_rate = 1e-3;
  EXPECT_EQ(learning_rate_at(t, 0), 1e-3);
  EXPECT_EQ(learning_rate_at(t, 4), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(t, 5), 1e-4);
  t.decay_epoch = 2;
  EXPECT_DOUBLE_EQ(learning_rate_at(t, 2), 1e-4);
}

TEST(Train, MissingDatasetRejected) {
  EXPECT_THROW(cli::cmd_train(small_config(), 1, "/nonexistent/cadgd", scratch("missing")), std::runtime_error);
}

TEST(Eval, UntrainedFiniteAndStrategiesShareForward) {
  const Config c = small_config(0);
  const fs::path data = scratch("eval_data"), out = scratch("eval_out");
  cli::cmd_gen(c, 4, data);
  const cli::TrainOutputs o = cli::cmd_train(c, 1, data, out);
  std::ostringstream both, thr, den;
  const EvalReport r = cli::cmd_eval(c, o.checkpoint, data, both);
  ASSERT_FALSE(r.pairs.empty());
  EXPECT_TRUE(r.violations.empty());
  ASSERT_TRUE(r.density.has_value());
  for (const StrategySummary* s : {&r.threshold, &*r.density}) {
    EXPECT_TRUE(std::isfinite(s->counts.mae));
    EXPECT_TRUE(std::isfinite(s->counts.rmse));
    EXPECT_LE(s->counts.mae, s->counts.rmse + 1e-12);
  }
  const EvalReport rt = cli::cmd_eval(c, o.checkpoint, data, thr, {Strategy::threshold, std::nullopt});
  const EvalReport rd = cli::cmd_eval(c, o.checkpoint, data, den, {Strategy::density, std::nullopt});
  ASSERT_EQ(rt.pairs.size(), rd.pairs.size());
  for (std::size_t i = 0; i < rt.pairs.size(); ++i) {
    EXPECT_EQ(rt.pairs[i].threshold.count, rd.pairs[i].threshold.count);
    EXPECT_EQ(rt.pairs[i].density_sum, rd.pairs[i].density_sum);
    EXPECT_EQ(rt.pairs[i].density->count, rd.pairs[i].density->count);
  }
  EXPECT_NE(thr.str(), den.str());
  for (const PairEval& p : r.pairs) {
    EXPECT_EQ(p.threshold.points.empty() ? 0u : p.threshold.points.dim(0), p.threshold.count);
    EXPECT_EQ(p.density->count, guided_count(p.density_sum, c.model.queries));
  }
}

TEST(Eval, InferenceFlagLeavesForwardUnchanged) {
  Config c = small_config();
  ParamStore store;
  init_model(store, c.model, 3);
  const Vocab v = make_vocab(c.scene);
  const Scene s = generate_scene(c.scene, v, 11);
  const FeaturePyramid pyr = render_features(s, v, c.scene, s.seed);
  ModelConfig r6 = c.model, r7 = c.model;
  r6.ablation = ablation_row(6);
  r7.ablation = ablation_row(7);
  for (const Expression& e : s.expressions) {
    const TextFeatures t = embed_expression(e, v);
    const PairPrediction a = predict_pair(r6, store, pyr, t), b = predict_pair(r7, store, pyr, t);
    EXPECT_EQ(a.prediction.logits, b.prediction.logits);
    EXPECT_EQ(a.prediction.points, b.prediction.points);
    EXPECT_EQ(a.density, b.density);
  }
}

TEST(Eval, CheckpointShapeMismatchRejected) {
  const Config c = small_config(0);
  const fs::path data = scratch("mismatch_data"), out = scratch("mismatch_out");
  cli::cmd_gen(c, 4, data);
  const cli::TrainOutputs o = cli::cmd_train(c, 1, data, out);
  Config other = c;
  other.model.decoder.ffn_hidden = 20;
  std::ostringstream sink;
  EXPECT_ANY_THROW(cli::cmd_eval(other, o.checkpoint, data, sink));
  Config off = c;
  off.model.ablation = ablation_row(1);
  EXPECT_ANY_THROW(cli::cmd_eval(off, o.checkpoint, data, sink));
}

TEST(Gradcheck, ReportsCorruptedBackwardByName) {
  GradCase broken{"corrupted_square",
                  [](std::uint64_t seed, int) {
                    Rng rng(seed);
                    const Tensor x = rng.uniform_tensor({4}, 0.5, 1.5);
                    return grad_check(
                        [](Graph& g, Var v) {
                          // x*x with the backward of 3x^2/2.
                          Var sq = mul(v, v);
                          Var bad = g.record(sq.value(), {v}, [v](Graph& gg, const Tensor& go) {
                            Tensor gv = go;
                            for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= 3.0 * v.value()[i];
                            gg.accumulate_grad(v, gv);
                          });
                          return sum(bad);
                        },
                        x, kGradEps);
                  },
                  1};
  std::ostringstream out;
  cli::GradcheckOptions opt;
  opt.seeds = 1;
  opt.composite = false;
  const int failures = cli::cmd_gradcheck(Config{}, out, opt, {broken});
  EXPECT_EQ(failures, 1);
  std::istringstream lines(out.str());
  std::size_t n = 0;
  bool found = false;
  for (std::string line; std::getline(lines, line); ++n) {
    if (line.rfind("corrupted_square\t", 0) == 0) {
      found = true;
      EXPECT_NE(line.find("FAIL"), std::string::npos);
    } else {
      EXPECT_NE(line.find("PASS"), std::string::npos) << line;
    }
  }
  EXPECT_TRUE(found);
  EXPECT_EQ(n, operation_grad_cases().size() + 1);
}

TEST(ExportDensity, RoundTripAndExpressionDependence) {
  const Config c = small_config(0);
  const fs::path data = scratch("export_data"), out = scratch("export_out"), ck = scratch("export_ck");
  cli::cmd_gen(c, 4, data);
  const cli::TrainOutputs o = cli::cmd_train(c, 1, data, ck);
  const Vocab v = make_vocab(c.scene);
  const auto val = read_scenes(data / cli::kValFile, v, c.scene.max_tokens);
  const Scene& s = val.front();
  ASSERT_GE(s.expressions.size(), 2u);
  const cli::ExportedMaps a = cli::cmd_export_density(c, o.checkpoint, data, s.id, 0, out);
  const cli::ExportedMaps b = cli::cmd_export_density(c, o.checkpoint, data, s.id, 1, out);
  for (const fs::path& f : a.files) {
    EXPECT_TRUE(fs::exists(f));
    EXPECT_EQ(std::count(b.files.begin(), b.files.end(), f), 0) << f;
  }
  for (const cli::ExportedMaps* m : {&a, &b}) {
    for (const fs::path& f : m->files) {
      if (f.extension() != ".tns" || f.stem().string().find("_gt") == std::string::npos) continue;
      const auto tensors = load_tensor_file(f);
      ASSERT_EQ(tensors.size(), 1u);
      EXPECT_NEAR(tensors.front().second.sum(), m->gt_sum, 1e-6);
    }
  }
  const double expect_gt = static_cast<double>(referred_objects(s, s.expressions[0]).size());
  EXPECT_NEAR(a.gt_sum, expect_gt, 1e-6);
}

TEST(ExportDensity, EmptySelectionIsZeroGraymap) {
  const Config c = parse_config("[scene]\nmin_objects = 0\nmax_objects = 0\n[data]\ntrain_scenes = 1\nval_scenes = 1\n");
  const fs::path data = scratch("export_empty_data"), out = scratch("export_empty_out");
  cli::cmd_gen(c, 2, data);
  const cli::ExportedMaps m = cli::cmd_export_density(c, std::nullopt, data, 1, 0, out);
  EXPECT_EQ(m.gt_sum, 0.0);
  bool saw = false;
  for (const fs::path& f : m.files) {
    if (f.extension() != ".pgm" || f.stem().string().find("_gt") == std::string::npos) continue;
    saw = true;
    std::ifstream in(f, std::ios::binary);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    in.get();
    std::string pixels((std::istreambuf_iterator<char>(in)), {});
    EXPECT_EQ(magic, "P5");
    ASSERT_EQ(pixels.size(), static_cast<std::size_t>(w * h));
    for (char p : pixels) EXPECT_EQ(p, 0);
  }
  EXPECT_TRUE(saw);
}

}  // namespace
}  // namespace cadgd
