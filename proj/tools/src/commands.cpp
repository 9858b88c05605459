#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "cadgd/composite_check.hpp"
#include "cadgd/model.hpp"
#include "cadgd/random.hpp"
#include "cadgd/train.hpp"

namespace cadgd::cli {
namespace {

constexpr std::uint64_t kValStream = 0x7a1;

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

ParamStore load_model(const Config& config, const fs::path& checkpoint) {
  ParamStore store;
  init_model(store, config.model, config.train.seed);
  load_checkpoint(store, checkpoint);
  return store;
}

const Scene& find_scene(const std::vector<Scene>& scenes, int id) {
  for (const Scene& s : scenes) {
    if (s.id == id) return s;
  }
  throw std::invalid_argument("no scene with id " + std::to_string(id));
}

}  // namespace

std::string content_hash(const std::string& bytes) {
  const std::string blob = "blob " + std::to_string(bytes.size()) + '\0' + bytes;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Scene> generate_split(const Config& config, const Vocab& vocab, std::uint64_t seed,
                                  bool validation) {
  const int n = validation ? config.data.val_scenes : config.data.train_scenes;
  const int first_id = validation ? config.data.train_scenes : 0;
  const std::uint64_t base = validation ? Rng::derive(seed, kValStream) : seed;
  std::vector<Scene> scenes;
  for (int i = 0; i < n; ++i) {
    scenes.push_back(generate_scene(config.scene, vocab, Rng::derive(base, static_cast<std::uint64_t>(i)),
                                    first_id + i));
  }
  return scenes;
}

void cmd_gen(const Config& config, std::uint64_t seed, const fs::path& out) {
  validate(config);
  ensure_dir(out);
  const Vocab vocab = make_vocab(config.scene);
  write_scenes(out / kTrainFile, generate_split(config, vocab, seed, false));
  write_scenes(out / kValFile, generate_split(config, vocab, seed, true));
}

fs::path resolve_data(const fs::path& data, const char* file_name) {
  if (fs::is_directory(data)) return data / file_name;
  if (!fs::exists(data)) throw std::runtime_error("dataset " + data.string() + " does not exist");
  return data;
}

TrainOutputs cmd_train(const Config& base, std::uint64_t seed, const fs::path& data,
                       const fs::path& out, std::ostream* progress) {
  Config config = base;
  config.train.seed = seed;
  validate(config);
  const fs::path train_file = resolve_data(data, kTrainFile);
  const Vocab vocab = make_vocab(config.scene);
  const std::vector<Scene> scenes = read_scenes(train_file, vocab, config.scene.max_tokens);
  ensure_dir(out);

  TrainOutputs o{out / kCheckpointFile, out / kMetricsFile, out / kManifestFile};
  const std::string config_text = config_to_string(config);
  {
    nlohmann::ordered_json m;
    m["config"] = config_text;
    m["seed"] = seed;
    m["dataset"] = train_file.string();
    m["checkpoint"] = kCheckpointFile;
    m["metrics_log"] = kMetricsFile;
    m["inputs_hash"] = content_hash(config_text + read_file(train_file));
    open_out(o.manifest) << m.dump(2) << '\n';
  }

  ParamStore store;
  init_model(store, config.model, seed);
  std::ofstream log = open_out(o.metrics);
  log << "# manifest " << kManifestFile << '\n' << kMetricsHeader << '\n';
  int last_epoch = -1;
  double epoch_total = 0.0;
  std::size_t epoch_steps = 0;
  auto report_epoch = [&] {
    if (progress && epoch_steps > 0) {
      *progress << "epoch " << last_epoch << " mean_total " << epoch_total / static_cast<double>(epoch_steps)
                << '\n';
    }
  };
  train_model(config, vocab, scenes, store, [&](const StepRecord& r) {
    log << format_step(r) << '\n';
    if (r.epoch != last_epoch) {
      report_epoch();
      last_epoch = r.epoch;
      epoch_total = 0.0;
      epoch_steps = 0;
    }
    epoch_total += r.loss.total;
    ++epoch_steps;
  });
  report_epoch();
  if (!log) throw std::runtime_error("write failed for " + o.metrics.string());
  save_checkpoint(store, o.checkpoint);
  return o;
}

EvalReport cmd_eval(const Config& config, const fs::path& checkpoint, const fs::path& data,
                    std::ostream& report, const EvalOptions& options) {
  validate(config);
  if (options.strategy == Strategy::density && !config.model.ablation.cadgen) {
    throw std::invalid_argument("density strategy needs a model with cadgen enabled");
  }
  const Vocab vocab = make_vocab(config.scene);
  const std::vector<Scene> scenes =
      read_scenes(resolve_data(data, kValFile), vocab, config.scene.max_tokens);
  const ParamStore store = load_model(config, checkpoint);
  EvalReport r = evaluate(config, store, vocab, scenes);

  if (options.dump_queries) {
    std::ofstream dump = open_out(*options.dump_queries);
    dump << "#scene\texpression\tquery\tlevel\tcell\tx\ty\tscore\tcontent...\n";
    for (const Scene& s : scenes) {
      const FeaturePyramid pyramid = render_features(s, vocab, config.scene, s.seed);
      for (std::size_t e = 0; e < s.expressions.size(); ++e) {
        const PairPrediction p = predict_pair(config.model, store, pyramid, embed_expression(s.expressions[e], vocab));
        std::ostringstream lines;
        write_query_dump(lines, p.selection, p.queries);
        std::istringstream in(lines.str());
        for (std::string line; std::getline(in, line);) dump << s.id << '\t' << e << '\t' << line << '\n';
      }
    }
  }

  report << "# checkpoint " << checkpoint.string() << '\n';
  write_report(report, r, options.strategy);
  return r;
}

int cmd_gradcheck(const Config& config, std::ostream& out, const GradcheckOptions& options,
                  const std::vector<GradCase>& extra_cases) {
  std::vector<GradCase> cases = operation_grad_cases();
  for (const GradCase& c : extra_cases) cases.push_back(c);
  int failures = 0;
  char buf[256];
  for (const GradSuiteLine& line : run_grad_suite(cases, options.seeds)) {
    std::snprintf(buf, sizeof buf, "%s\t%.3e\t%s\n", line.name.c_str(), line.max_error,
                  line.pass ? "PASS" : "FAIL");
    out << buf << std::flush;
    if (!line.pass) ++failures;
  }
  if (options.composite) {
    Config micro = micro_config();
    micro.loss = config.loss;
    GradCase total{"composite_total_loss",
                   [&](std::uint64_t seed, int) { return composite_grad_check(micro, seed).max_relative_error; }, 1};
    const GradSuiteLine line = run_grad_suite({total}, options.composite_seeds).front();
    std::snprintf(buf, sizeof buf, "%s\t%.3e\t%s\n", line.name.c_str(), line.max_error,
                  line.pass ? "PASS" : "FAIL");
    out << buf;
    if (!line.pass) ++failures;
  }
  return failures;
}

ExportedMaps cmd_export_density(const Config& config, const std::optional<fs::path>& checkpoint,
                                const fs::path& data, int scene_id, std::size_t expression,
                                const fs::path& out) {
  validate(config);
  const Vocab vocab = make_vocab(config.scene);
  const std::vector<Scene> scenes = read_scenes(resolve_data(data, kValFile), vocab, config.scene.max_tokens);
  const Scene& scene = find_scene(scenes, scene_id);
  if (expression >= scene.expressions.size()) {
    throw std::invalid_argument("scene " + std::to_string(scene_id) + " has " +
                                std::to_string(scene.expressions.size()) + " expressions");
  }
  const Expression& expr = scene.expressions[expression];
  ensure_dir(out);
  const std::string stem = "scene" + std::to_string(scene_id) + "_expr" + std::to_string(expression);
  ExportedMaps result;
  auto emit = [&](const std::string& name, const Tensor& map) {
    const fs::path tns = out / (stem + "_" + name + ".tns");
    const fs::path pgm = out / (stem + "_" + name + ".pgm");
    save_tensor_file(tns, {{name, map}});
    write_pgm(pgm, map);
    result.files.push_back(tns);
    result.files.push_back(pgm);
  };
  const auto shapes = pyramid_shapes(scene.width, scene.height);
  const Tensor gt = gt_density_map(scene, expr, shapes[0].first, shapes[0].second, config.scene.kernel_size);
  result.gt_sum = gt.sum();
  emit("gt", gt);
  if (checkpoint) {
    if (!config.model.ablation.cadgen) throw std::invalid_argument("model has no density estimator (cadgen off)");
    const ParamStore store = load_model(config, *checkpoint);
    Graph g;
    const ForwardResult f = forward(g, store, config.model, render_features(scene, vocab, config.scene, scene.seed),
                                    embed_expression(expr, vocab));
    result.predicted_sum = f.density.value().sum();
    emit("pred", f.density.value());
    for (std::size_t l = 0; l < f.spatial_maps.size(); ++l) {
      emit("spatial" + std::to_string(l), f.spatial_maps[l].value());
    }
  }
  return result;
}

std::vector<AblationResult> cmd_ablate(const Config& config, std::uint64_t seed, int seeds,
                                       const fs::path& data, const fs::path& out,
                                       const std::vector<std::string>& rows, std::ostream* progress) {
  if (seeds < 1) throw std::invalid_argument("need at least one seed");
  std::vector<AblationResult> results;
  std::map<std::string, fs::path> trained;  // training flags + seed -> run dir
  for (const std::string& row : rows) {
    AblationResult res;
    res.row = row;
    res.flags = parse_ablation(row);
    Config run = config;
    run.model.ablation = res.flags;
    Ablation train_flags = res.flags;
    train_flags.density_guided = false;
    for (int s = 0; s < seeds; ++s) {
      const std::uint64_t run_seed = seed + static_cast<std::uint64_t>(s);
      const std::string key = ablation_string(train_flags) + "#" + std::to_string(run_seed);
      auto it = trained.find(key);
      if (it == trained.end()) {
        const fs::path dir = out / (row + "_seed" + std::to_string(run_seed));
        if (progress) *progress << "training " << row << " seed " << run_seed << '\n' << std::flush;
        cmd_train(run, run_seed, data, dir);
        it = trained.emplace(key, dir).first;
      }
      run.train.seed = run_seed;
      std::ofstream report = open_out(out / (row + "_seed" + std::to_string(run_seed) + "_eval.tsv"));
      res.reports.push_back(cmd_eval(run, it->second / kCheckpointFile, data, report));
    }
    const bool guided = res.flags.density_guided;
    for (const EvalReport& r : res.reports) {
      const StrategySummary& s = guided ? *r.density : r.threshold;
      res.mae += s.counts.mae / seeds;
      res.rmse += s.counts.rmse / seeds;
      res.precision += s.precision / seeds;
      res.recall += s.recall / seeds;
      res.f1 += s.f1 / seeds;
    }
    if (progress) *progress << row << " mae " << res.mae << '\n' << std::flush;
    results.push_back(std::move(res));
  }
  std::ofstream table = open_out(out / "ablation.tsv");
  write_ablation_table(table, results);
  return results;
}

void write_ablation_table(std::ostream& out, const std::vector<AblationResult>& results) {
  char buf[512];
  out << "row\tflags\tseeds\tmae\trmse\tprecision\trecall\tf1\n";
  for (const AblationResult& r : results) {
    std::snprintf(buf, sizeof buf, "%s\t%s\t%zu\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\n", r.row.c_str(),
                  ablation_string(r.flags).c_str(), r.reports.size(), r.mae, r.rmse, r.precision,
                  r.recall, r.f1);
    out << buf;
  }
}

}  // namespace cadgd::cli
