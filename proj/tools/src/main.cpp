#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cadgd/config.hpp"
#include "cadgd/model.hpp"
#include "commands.hpp"

namespace {

namespace fs = std::filesystem;
using namespace cadgd;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string ablation;
};

Config resolve(const Common& c) {
  Config config = c.config_path.empty() ? Config{} : load_config(c.config_path);
  if (!c.ablation.empty()) {
    config.model.ablation = parse_ablation(c.ablation);
    validate(config);
  }
  return config;
}

void add_common(CLI::App* app, Common& c, bool with_ablation) {
  app->add_option("--config", c.config_path, "configuration file (key = value under [sections])")
      ->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "override the seed");
  if (with_ablation) {
    app->add_option("--ablation", c.ablation, "R1..R7 or a comma list of enabled flags");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Referring-expression counting with contextual attribute density"};
  app.require_subcommand(1);
  Common common;

  std::string out;
  std::string data;
  std::string checkpoint;
  std::string strategy;
  std::string dump_queries;
  int scene_id = 0;
  std::size_t expression = 0;
  int seeds = 3;
  std::vector<std::string> rows = {"R1", "R2", "R3", "R4", "R5", "R6", "R7"};
  int grad_seeds = 5;

  auto* gen = app.add_subcommand("gen", "generate train/val scene files");
  add_common(gen, common, false);
  gen->add_option("--out", out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, common, true);
  train->add_option("--data", data, "dataset directory or scene file")->required();
  train->add_option("--out", out, "run directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, common, true);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "dataset directory or scene file")->required();
  eval->add_option("--strategy", strategy, "threshold or density (default: both)");
  eval->add_option("--out", out, "report file (default: stdout)");
  eval->add_option("--dump-queries", dump_queries, "write selected query positions and contents");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every operation and the full loss");
  add_common(grad, common, false);
  grad->add_option("--seeds", grad_seeds, "random seeds per operation")->check(CLI::PositiveNumber);

  auto* exp = app.add_subcommand("export-density", "write GT and predicted density maps");
  add_common(exp, common, true);
  exp->add_option("--checkpoint", checkpoint, "checkpoint file (omit for GT only)")->check(CLI::ExistingFile);
  exp->add_option("--data", data, "dataset directory or scene file")->required();
  exp->add_option("--scene", scene_id, "scene id")->required();
  exp->add_option("--expression", expression, "expression index within the scene");
  exp->add_option("--out", out, "output directory")->required();

  auto* ablate = app.add_subcommand("ablate", "train and evaluate the R1..R7 matrix");
  add_common(ablate, common, false);
  ablate->add_option("--data", data, "dataset directory")->required();
  ablate->add_option("--out", out, "output directory")->required();
  ablate->add_option("--seeds", seeds, "seeds per row")->check(CLI::PositiveNumber);
  ablate->add_option("--rows", rows, "rows to run")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    const Config config = resolve(common);
    if (gen->parsed()) {
      cli::cmd_gen(config, common.seed.value_or(config.data.seed), out);
      std::cout << "wrote " << (fs::path(out) / cli::kTrainFile).string() << " and "
                << (fs::path(out) / cli::kValFile).string() << '\n';
      return 0;
    }
    if (train->parsed()) {
      const auto o = cli::cmd_train(config, common.seed.value_or(config.train.seed), data, out, &std::cout);
      std::cout << "checkpoint " << o.checkpoint.string() << '\n';
      return 0;
    }
    if (eval->parsed()) {
      cli::EvalOptions opts;
      if (!strategy.empty()) opts.strategy = parse_strategy(strategy);
      if (!dump_queries.empty()) opts.dump_queries = dump_queries;
      Config c = config;
      if (common.seed) c.train.seed = *common.seed;
      EvalReport r;
      if (out.empty()) {
        r = cli::cmd_eval(c, checkpoint, data, std::cout, opts);
      } else {
        std::ofstream f(out, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + out);
        r = cli::cmd_eval(c, checkpoint, data, f, opts);
      }
      for (const auto& v : r.violations) std::cerr << "invariant violated: " << v << '\n';
      return r.violations.empty() ? 0 : 2;
    }
    if (grad->parsed()) {
      cli::GradcheckOptions opts;
      opts.seeds = grad_seeds;
      const int failures = cli::cmd_gradcheck(config, std::cout, opts);
      std::cout << (failures == 0 ? "all gradient checks passed" : std::to_string(failures) + " failing")
                << '\n';
      return failures == 0 ? 0 : 1;
    }
    if (exp->parsed()) {
      std::optional<fs::path> ck;
      if (!checkpoint.empty()) ck = checkpoint;
      const auto r = cli::cmd_export_density(config, ck, data, scene_id, expression, out);
      for (const auto& f : r.files) std::cout << f.string() << '\n';
      std::cout << "gt_sum " << r.gt_sum;
      if (ck) std::cout << " predicted_sum " << r.predicted_sum;
      std::cout << '\n';
      return 0;
    }
    if (ablate->parsed()) {
      const auto results = cli::cmd_ablate(config, common.seed.value_or(config.train.seed), seeds, data,
                                           out, rows, &std::cerr);
      cli::write_ablation_table(std::cout, results);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
