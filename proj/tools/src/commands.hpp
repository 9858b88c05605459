#pragma once

// Subcommand implementations behind the cadgd executable. Each throws on bad
// input; callers map exceptions to a nonzero exit status.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cadgd/config.hpp"
#include "cadgd/evaluate.hpp"
#include "cadgd/gradcheck_suite.hpp"
#include "cadgd/scene.hpp"

namespace cadgd::cli {

namespace fs = std::filesystem;

inline constexpr const char* kTrainFile = "train.jsonl";
inline constexpr const char* kValFile = "val.jsonl";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kMetricsFile = "metrics.tsv";
inline constexpr const char* kManifestFile = "manifest.json";

// Git blob hash (SHA-1 over "blob <size>\0" + bytes), hex encoded.
std::string content_hash(const std::string& bytes);
std::string read_file(const fs::path& path);

// Scenes for one split; ids are 0.. for train and continue for val.
std::vector<Scene> generate_split(const Config& config, const Vocab& vocab, std::uint64_t seed,
                                  bool validation);
void cmd_gen(const Config& config, std::uint64_t seed, const fs::path& out);

// A directory resolves to its `file_name`; a file is used as given.
fs::path resolve_data(const fs::path& data, const char* file_name);

struct TrainOutputs {
  fs::path checkpoint;
  fs::path metrics;
  fs::path manifest;
};

// Trains from `data` (directory or scene file); epochs = 0 writes the
// initialisation. Writes checkpoint, metrics log and manifest into `out`.
TrainOutputs cmd_train(const Config& config, std::uint64_t seed, const fs::path& data,
                       const fs::path& out, std::ostream* progress = nullptr);

struct EvalOptions {
  std::optional<Strategy> strategy;  // summary lines for just one strategy
  std::optional<fs::path> dump_queries;
};

EvalReport cmd_eval(const Config& config, const fs::path& checkpoint, const fs::path& data,
                    std::ostream& report, const EvalOptions& options = {});

struct GradcheckOptions {
  int seeds = 5;
  int composite_seeds = 3;
  bool composite = true;
};

// One "name<TAB>max_relative_error<TAB>PASS|FAIL" line per case; returns the
// number of failing cases.
int cmd_gradcheck(const Config& config, std::ostream& out, const GradcheckOptions& options = {},
                  const std::vector<GradCase>& extra_cases = {});

struct ExportedMaps {
  std::vector<fs::path> files;
  double predicted_sum = 0.0;
  double gt_sum = 0.0;
};

ExportedMaps cmd_export_density(const Config& config, const std::optional<fs::path>& checkpoint,
                                const fs::path& data, int scene_id, std::size_t expression,
                                const fs::path& out);

struct AblationResult {
  std::string row;
  Ablation flags;
  std::vector<EvalReport> reports;  // one per seed
  double mae = 0.0;                 // seed means, primary strategy
  double rmse = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Trains and evaluates each row for every seed in [seed, seed + seeds). Rows
// that differ only in the inference flag share one trained model.
std::vector<AblationResult> cmd_ablate(const Config& config, std::uint64_t seed, int seeds,
                                       const fs::path& data, const fs::path& out,
                                       const std::vector<std::string>& rows,
                                       std::ostream* progress = nullptr);
void write_ablation_table(std::ostream& out, const std::vector<AblationResult>& results);

}  // namespace cadgd::cli
