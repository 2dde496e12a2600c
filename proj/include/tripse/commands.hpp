#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "tripse/config.hpp"
#include "tripse/data.hpp"

namespace tripse {

enum ExitCode : int {
  kExitOk = 0,
  kExitVerification = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitCheckpoint = 4,
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Defaults, then the file (when non-empty), then the overrides.
RunConfig resolve_config(const std::string& config_path, const Overrides& overrides);

struct DataSplits {
  std::vector<Sample> train;
  std::vector<Sample> eval;
};

/// Loads the configured dataset; the eval part follows eval_split for FER2013
/// and is a held-out synthetic draw otherwise. Subset caps are applied.
DataSplits load_data(const RunConfig& cfg);
std::vector<Sample> load_split(const RunConfig& cfg, Split split);

/// Writes config.txt, metrics.csv, checkpoint.tsew and model.tsew under
/// output_dir and prints "best_val_acc=<v> epoch=<e>".
int cmd_train(const std::string& config_path, const Overrides& overrides, std::ostream& out, std::ostream& err);

struct EvalArgs {
  std::string checkpoint;
  std::string config;  // defaults to config.txt next to the checkpoint
  Overrides overrides;
  std::optional<std::string> split;
};

/// Prints "accuracy=<v> n=<count>".
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);

struct GradcheckArgs {
  std::string variant = "tripse1";  // an attention kind, or "backbone"
  std::size_t kernel = 3;
  std::vector<std::size_t> shape{1, 4, 5, 5};
  double eps = 1e-5;
  std::size_t ratio = 0;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  bool inject_fault = false;
};

/// Prints one line per checked tensor; exit 1 when any error exceeds the tolerance.
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);

struct ParamsArgs {
  std::string variant = "tripse1";
  std::vector<std::size_t> widths{96, 192, 384, 768};
  std::size_t ratio = 0;
  std::size_t kernel = 7;
  std::vector<std::size_t> spatial{56, 28, 14, 7};
};

struct ParamsReport {
  std::vector<std::size_t> per_stage;
  std::size_t total = 0;
};

ParamsReport attention_params(const ParamsArgs& args);
/// Millions with one decimal, e.g. "0.1M".
std::string format_millions(std::size_t n);
int cmd_params(const ParamsArgs& args, std::ostream& out, std::ostream& err);

struct BenchArgs {
  std::string variant = "tripse1";
  std::vector<std::size_t> shape{8, 64, 28, 28};
  std::size_t iters = 20;
  std::size_t warmup = 10;
  std::size_t ratio = 0;
  std::size_t kernel = 7;
  std::uint64_t seed = 0;
  std::string baseline;  // second variant timed for a relative overhead
};

/// Mean and minimum forward latency in nanoseconds after the warmup.
int cmd_bench(const BenchArgs& args, std::ostream& out, std::ostream& err);

}  // namespace tripse
