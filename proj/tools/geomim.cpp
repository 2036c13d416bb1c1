// geomim: dataset generation, pretraining, probing, benchmarking, verification
// and reconstruction export.

#include <CLI11.hpp>
#include <iostream>
#include <map>
#include <string>

#include "geomim/commands.hpp"
#include "geomim/config.hpp"
#include "geomim/trainer.hpp"

namespace {

using geomim::ConfigOverrides;

/// Registers one `--section.key` flag per config key on `cmd`.
struct OverrideFlags {
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    const geomim::RunConfig defaults;
    for (const auto& key : defaults.keys()) {
      cmd->add_option("--" + key, values[key], "config override (default " + defaults.get(key) + ")")
          ->group("Config overrides");
    }
  }

  ConfigOverrides collect(const CLI::App* cmd) const {
    ConfigOverrides out;
    for (const auto& [key, value] : values) {
      if (cmd->count("--" + key) > 0) out.emplace_back(key, value);
    }
    return out;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GeoMIM desk-scale pretraining toolkit"};
  app.require_subcommand(1);

  geomim::GenDataOptions gen;
  std::uint64_t gen_seed = 0;
  int gen_scenes = 0, gen_views = 0;
  std::string gen_config;
  OverrideFlags gen_flags;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic multi-view dataset");
  gen_cmd->add_option("--out", gen.out, "output dataset directory")->required();
  auto* gen_scenes_opt = gen_cmd->add_option("--scenes", gen_scenes, "number of scenes")->check(CLI::NonNegativeNumber);
  auto* gen_seed_opt =
      gen_cmd->add_option("--seed", gen_seed, "dataset seed (falls back to GEOMIM_SEED)");
  auto* gen_views_opt = gen_cmd->add_option("--views", gen_views, "cameras per rig")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--config", gen_config, "INI config file")->check(CLI::ExistingFile);
  gen_flags.attach(gen_cmd);

  geomim::PretrainOptions pre;
  int pre_steps = 0;
  std::uint64_t pre_seed = 0;
  std::string pre_config;
  OverrideFlags pre_flags;
  auto* pre_cmd = app.add_subcommand("pretrain", "run masked BEV-reconstruction pretraining");
  pre_cmd->add_option("--data", pre.data, "dataset directory")->required();
  pre_cmd->add_option("--out", pre.out, "run directory")->required();
  pre_cmd->add_option("--config", pre_config, "INI config file")->check(CLI::ExistingFile);
  auto* pre_steps_opt = pre_cmd->add_option("--steps", pre_steps, "training steps")
                            ->check(CLI::NonNegativeNumber);
  auto* pre_seed_opt = pre_cmd->add_option(
      "--seed", pre_seed, "trainer and model seed (falls back to GEOMIM_SEED)");
  pre_flags.attach(pre_cmd);

  geomim::VerifyCommandOptions ver;
  auto* ver_cmd = app.add_subcommand("verify", "run the invariant suite");
  ver_cmd->add_flag("--corrupt-splat", ver.corrupt_splat,
                    "test hook: corrupt one splat index so conservation must fail");

  geomim::BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench-cva", "CVA vs global attention cost (CSV)");
  bench_cmd->add_option("--rows", bench.rows, "token-row counts")->delimiter(',');
  bench_cmd->add_option("--views", bench.views, "views")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--cols", bench.cols, "token columns")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--dim", bench.dim, "channels")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--heads", bench.heads, "attention heads")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--repeats", bench.repeats, "timing repeats (best is kept)")
      ->check(CLI::PositiveNumber);

  geomim::DumpOptions dump;
  auto* dump_cmd = app.add_subcommand("dump-recon", "export reconstructions of one sample");
  dump_cmd->add_option("--checkpoint", dump.checkpoint, "checkpoint directory")->required();
  dump_cmd->add_option("--sample", dump.sample, "sample directory inside a dataset")->required();
  dump_cmd->add_option("--out", dump.out, "output directory")->required();
  dump_cmd->add_option("--mask-ratio", dump.mask_ratio, "mask ratio (0 disables masking)")
      ->check(CLI::Range(0.0, 0.999999));
  dump_cmd->add_option("--mask-seed", dump.mask_seed, "mask seed");

  geomim::ProbeOptions probe;
  std::string probe_checkpoint, probe_config;
  OverrideFlags probe_flags;
  auto* probe_cmd = app.add_subcommand("probe", "BEV-occupancy transfer probe");
  probe_cmd->add_option("--train", probe.train, "probe training dataset")->required();
  probe_cmd->add_option("--eval", probe.eval, "probe evaluation dataset")->required();
  probe_cmd->add_option("--checkpoint", probe_checkpoint, "pretrained checkpoint directory");
  probe_cmd->add_option("--config", probe_config, "INI config file")->check(CLI::ExistingFile);
  probe_flags.attach(probe_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? geomim::kExitOk : geomim::kExitUsage;
  }

  try {
    if (*gen_cmd) {
      if (*gen_seed_opt) gen.seed = gen_seed;
      if (*gen_scenes_opt) gen.scenes = gen_scenes;
      if (*gen_views_opt) gen.views = gen_views;
      if (!gen_config.empty()) gen.config = gen_config;
      gen.overrides = gen_flags.collect(gen_cmd);
      return geomim::cmd_gen_data(gen, std::cout);
    }
    if (*pre_cmd) {
      if (*pre_steps_opt) pre.steps = pre_steps;
      if (*pre_seed_opt) pre.seed = pre_seed;
      if (!pre_config.empty()) pre.config = pre_config;
      pre.overrides = pre_flags.collect(pre_cmd);
      return geomim::cmd_pretrain(pre, std::cout);
    }
    if (*ver_cmd) return geomim::cmd_verify(ver, std::cout);
    if (*bench_cmd) return geomim::cmd_bench_cva(bench, std::cout);
    if (*dump_cmd) return geomim::cmd_dump_recon(dump, std::cout);
    if (*probe_cmd) {
      if (!probe_checkpoint.empty()) probe.checkpoint = probe_checkpoint;
      if (!probe_config.empty()) probe.config = probe_config;
      probe.overrides = probe_flags.collect(probe_cmd);
      return geomim::cmd_probe(probe, std::cout);
    }
  } catch (const geomim::NumericAbort& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return geomim::kExitNumericAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return geomim::kExitUsage;
  }
  return geomim::kExitUsage;
}
