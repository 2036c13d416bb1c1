#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace geomim {

/// Process exit codes shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitVerifyFailed = 1,
  kExitNumericAbort = 2,
  kExitUsage = 3,
};

/// "section.key" -> value pairs from command-line flags; flags win over files.
using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

struct GenDataOptions {
  std::filesystem::path out;
  std::optional<int> scenes;          // defaults to the config's scenegen.scenes
  std::optional<std::uint64_t> seed;  // flag, then config file, then GEOMIM_SEED
  std::optional<int> views;           // defaults to the config's scenegen.views
  std::optional<std::filesystem::path> config;
  ConfigOverrides overrides;
};
int cmd_gen_data(const GenDataOptions& options, std::ostream& log);

struct PretrainOptions {
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> config;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;  // sets trainer.seed and model.seed
  ConfigOverrides overrides;
};
/// Writes config.ini, metrics.jsonl, periodic checkpoint_step_NNNNNN
/// directories and the final checkpoint/ directory under `out`.
int cmd_pretrain(const PretrainOptions& options, std::ostream& log);

struct VerifyCommandOptions {
  bool corrupt_splat = false;
};
int cmd_verify(const VerifyCommandOptions& options, std::ostream& out);

struct BenchOptions {
  std::vector<int> rows = {8, 16};
  int views = 6;
  int cols = 7;
  int dim = 64;
  int heads = 4;
  int repeats = 5;
};
/// CSV: kind,views,rows,cols,dim,tokens,attention_flops,total_flops,wall_ms
int cmd_bench_cva(const BenchOptions& options, std::ostream& csv);

struct DumpOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path sample;  // a sample directory inside a dataset
  std::filesystem::path out;
  double mask_ratio = 0.5;       // 0 disables masking
  std::uint64_t mask_seed = 0;
};
int cmd_dump_recon(const DumpOptions& options, std::ostream& log);

struct ProbeOptions {
  std::filesystem::path train;
  std::filesystem::path eval;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> config;
  ConfigOverrides overrides;
};
/// Prints one JSON object with the pretrained (when a checkpoint is given)
/// and random-init control probe metrics.
int cmd_probe(const ProbeOptions& options, std::ostream& out);

}  // namespace geomim
