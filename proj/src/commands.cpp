#include "geomim/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "geomim/config.hpp"
#include "geomim/lss.hpp"
#include "geomim/ops.hpp"
#include "geomim/png_writer.hpp"
#include "geomim/serialize.hpp"
#include "geomim/verify.hpp"

namespace geomim {

namespace fs = std::filesystem;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* text = std::getenv("GEOMIM_SEED");
  if (!text || !*text) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(text, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("GEOMIM_SEED is not an integer: ") + text);
  return v;
}

RunConfig load_config(const std::optional<fs::path>& file, const ConfigOverrides& overrides) {
  RunConfig cfg;
  if (file) cfg.merge_file(*file);
  for (const auto& [key, value] : overrides) cfg.set(key, value);
  return cfg;
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create directory " + dir.string() +
                             (ec ? ": " + ec.message() : ""));
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

bool same_grid(const BevGridSpec& a, const BevGridSpec& b) {
  return a.x_min == b.x_min && a.x_max == b.x_max && a.y_min == b.y_min && a.y_max == b.y_max &&
         a.nx == b.nx && a.ny == b.ny;
}

ModelConfig model_for_dataset(const RunConfig& cfg, const DatasetSpec& spec) {
  ModelConfig mc = cfg.model(spec.views, spec.height, spec.width);
  if (mc.dim != spec.teacher_channels) {
    throw ConfigError("model.dim = " + std::to_string(mc.dim) +
                      " must equal the dataset's teacher channels (" +
                      std::to_string(spec.teacher_channels) + ")");
  }
  if (!same_grid(cfg.bev(), spec.bev)) {
    throw ConfigError("[lss] grid does not match the grid the dataset's teacher was built on");
  }
  return mc;
}

}  // namespace

int cmd_gen_data(const GenDataOptions& options, std::ostream& log) {
  RunConfig cfg = load_config(options.config, options.overrides);
  if (options.scenes) cfg.set("scenegen.scenes", std::to_string(*options.scenes));
  if (options.views) cfg.set("scenegen.views", std::to_string(*options.views));
  if (options.seed) {
    cfg.set("scenegen.seed", std::to_string(*options.seed));
  } else if (auto s = env_seed(); s && !cfg.explicitly_set("scenegen.seed")) {
    cfg.set("scenegen.seed", std::to_string(*s));
  }
  const DatasetSpec spec = cfg.dataset();
  ensure_directory(options.out);
  const std::vector<Sample> samples = generate_samples(spec);
  write_dataset(options.out, spec, samples);
  log << "wrote " << samples.size() << " samples (" << spec.views << " views, seed " << spec.seed
      << ") to " << options.out.string() << '\n';
  return kExitOk;
}

int cmd_pretrain(const PretrainOptions& options, std::ostream& log) {
  RunConfig cfg = load_config(options.config, options.overrides);
  if (options.steps) cfg.set("trainer.total_steps", std::to_string(*options.steps));
  std::optional<std::uint64_t> seed = options.seed;
  if (!seed && !cfg.explicitly_set("trainer.seed") && !cfg.explicitly_set("model.seed")) {
    seed = env_seed();
  }
  if (seed) {
    cfg.set("trainer.seed", std::to_string(*seed));
    cfg.set("model.seed", std::to_string(*seed));
  }
  if (!fs::exists(options.data / "manifest.json")) {
    throw std::runtime_error("no dataset at " + options.data.string() + " (manifest.json missing)");
  }
  const Dataset data = load_dataset(options.data);
  const ModelConfig mc = model_for_dataset(cfg, data.spec);
  const TrainConfig tc = cfg.trainer();
  cfg.validate();

  ensure_directory(options.out);
  write_text(options.out / "config.ini", cfg.to_ini());
  std::ofstream metrics(options.out / "metrics.jsonl", std::ios::trunc | std::ios::binary);
  if (!metrics) throw std::runtime_error("cannot write metrics.jsonl in " + options.out.string());

  GeoMimModel model(mc, cfg.model_seed());
  Pretrainer trainer(model, data, tc);
  auto checkpoint = [&](const fs::path& dir) {
    save_checkpoint(dir, model,
                    {config_hash(mc), trainer.completed_steps(), trainer.rng_state(),
                     cfg.model_seed()});
  };
  try {
    for (int s = 1; s <= tc.total_steps; ++s) {
      const StepMetrics m = trainer.step();
      metrics << metrics_json_line(m) << '\n';
      metrics.flush();
      if (tc.checkpoint_every > 0 && s % tc.checkpoint_every == 0 && s < tc.total_steps) {
        char name[32];
        std::snprintf(name, sizeof name, "checkpoint_step_%06d", s);
        checkpoint(options.out / name);
      }
      if (s == 1 || s % 50 == 0 || s == tc.total_steps) {
        log << "step " << m.step << " lr " << m.lr << " rec " << m.rec << " depth " << m.depth
            << " total " << m.total << " grad_norm " << m.grad_norm << '\n';
      }
    }
  } catch (const NumericAbort& e) {
    nlohmann::ordered_json dump = {{"error", e.what()},
                                   {"step", trainer.completed_steps()},
                                   {"norms", e.diagnostics()}};
    write_text(options.out / "diagnostics.json", dump.dump(2) + "\n");
    log << "numeric abort: " << e.what() << "\nintermediate norms:\n";
    for (const auto& [name, value] : e.diagnostics()) log << "  " << name << " = " << value << '\n';
    return kExitNumericAbort;
  }
  checkpoint(options.out / "checkpoint");
  log << "checkpoint written to " << (options.out / "checkpoint").string() << '\n';
  return kExitOk;
}

int cmd_verify(const VerifyCommandOptions& options, std::ostream& out) {
  const auto results = run_verify_suite({options.corrupt_splat});
  out << format_report(results);
  bool ok = true;
  for (const auto& r : results) {
    if (!r.passed) {
      if (ok) out << "failures:\n";
      ok = false;
      out << "  " << r.module << " / " << r.name << '\n';
    }
  }
  return ok ? kExitOk : kExitVerifyFailed;
}

int cmd_bench_cva(const BenchOptions& options, std::ostream& csv) {
  if (options.rows.empty()) throw ConfigError("bench-cva: --rows must list at least one value");
  csv << "kind,views,rows,cols,dim,tokens,attention_flops,total_flops,wall_ms\n";
  for (const bool global : {false, true}) {
    for (int rows : options.rows) {
      if (rows < 1) throw ConfigError("bench-cva: rows must be positive");
      const AttentionCost c = measure_attention(options.views, rows, options.cols, options.dim,
                                                options.heads, global, options.repeats);
      char line[256];
      std::snprintf(line, sizeof line, "%s,%d,%d,%d,%d,%d,%llu,%llu,%.4f\n",
                    global ? "global" : "cva", options.views, rows, options.cols, options.dim,
                    options.views * rows * options.cols,
                    static_cast<unsigned long long>(c.attention_flops),
                    static_cast<unsigned long long>(c.total_flops), c.wall_ms);
      csv << line;
    }
  }
  return kExitOk;
}

int cmd_dump_recon(const DumpOptions& options, std::ostream& log) {
  if (!fs::exists(options.checkpoint / "meta.json")) {
    throw std::runtime_error("no checkpoint at " + options.checkpoint.string());
  }
  fs::path sample_dir = fs::absolute(options.sample).lexically_normal();
  if (sample_dir.filename().empty()) sample_dir = sample_dir.parent_path();
  if (!fs::exists(sample_dir / "images.bin")) {
    throw std::runtime_error("no sample at " + options.sample.string());
  }
  const DatasetSpec spec = read_manifest(sample_dir.parent_path());
  const Sample sample = load_sample(sample_dir, spec);

  const CheckpointMeta meta = read_checkpoint_meta(options.checkpoint);
  GeoMimModel model(checkpoint_model_config(options.checkpoint), meta.model_seed);
  load_checkpoint(options.checkpoint, model);
  const ModelConfig& mc = model.config();
  if (mc.views != spec.views || mc.image_height != spec.height || mc.image_width != spec.width ||
      mc.dim != spec.teacher_channels) {
    throw ConfigError("checkpoint model does not match the sample's dataset geometry");
  }

  const MaskPattern pattern = options.mask_ratio > 0.0
                                  ? sample_mask(options.mask_seed, mc.rows(), mc.cols(), mc.views,
                                                options.mask_ratio)
                                  : MaskPattern::none(mc.views, mc.rows(), mc.cols());
  NoGradGuard no_grad;
  const DecoderOutput dec = model.forward(sample.images, pattern, sample.rig);
  const PreparedSample prepared = prepare_sample(sample, mc, spec.bev);
  const BevGrid bev = lift_splat(dec.semantic, dec.depth_probs, prepared.plan);
  const BevGrid teacher = teacher_bev(sample.scene, spec.bev, spec.teacher_channels, spec.seed);

  ensure_directory(options.out);
  save_tensor(options.out / "fsem.bin", "fsem", dec.semantic);
  save_tensor(options.out / "depth.bin", "depth", dec.depth_probs);
  save_tensor(options.out / "bev.bin", "bev", bev.grid);
  save_tensor(options.out / "teacher.bin", "teacher", teacher.grid);

  char name[64];
  const std::size_t cells = spec.bev.cells();
  for (int c = 0; c < spec.teacher_channels; ++c) {
    const auto off = static_cast<std::size_t>(c) * cells;
    std::snprintf(name, sizeof name, "bev_c%02d.png", c);
    write_gray_png(options.out / name, spec.bev.nx, spec.bev.ny, bev.grid.values().subspan(off, cells));
    std::snprintf(name, sizeof name, "teacher_c%02d.png", c);
    write_gray_png(options.out / name, spec.bev.nx, spec.bev.ny,
                   teacher.grid.values().subspan(off, cells));
  }
  const int h = mc.rows(), w = mc.cols(), bins = mc.depth_bins;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const DepthBins db = mc.bins();
  const std::size_t pixels = static_cast<std::size_t>(spec.height) * spec.width;
  for (int v = 0; v < mc.views; ++v) {
    std::vector<double> expected(plane, 0.0);
    for (int b = 0; b < bins; ++b)
      for (std::size_t q = 0; q < plane; ++q)
        expected[q] += db.center(b) * dec.depth_probs[(static_cast<std::size_t>(v) * bins + b) * plane + q];
    std::snprintf(name, sizeof name, "depth_v%d.png", v);
    write_gray_png(options.out / name, h, w, expected);
    for (int ch = 0; ch < 3; ++ch) {
      std::snprintf(name, sizeof name, "image_v%d_c%d.png", v, ch);
      write_gray_png(options.out / name, spec.height, spec.width,
                     sample.images.values().subspan((static_cast<std::size_t>(v) * 3 + ch) * pixels,
                                                    pixels));
    }
  }
  log << "wrote reconstruction of " << sample.id << " to " << options.out.string() << '\n';
  return kExitOk;
}

int cmd_probe(const ProbeOptions& options, std::ostream& out) {
  RunConfig cfg = load_config(options.config, options.overrides);
  const Dataset train = load_dataset(options.train);
  const Dataset eval = load_dataset(options.eval);
  if (!same_grid(train.spec.bev, eval.spec.bev) || train.spec.views != eval.spec.views ||
      train.spec.height != eval.spec.height || train.spec.width != eval.spec.width) {
    throw ConfigError("probe: train and eval datasets have different geometry");
  }
  ModelConfig mc;
  std::uint64_t model_seed = cfg.model_seed();
  std::optional<ParamList> weights;
  if (options.checkpoint) {
    mc = checkpoint_model_config(*options.checkpoint);
    model_seed = read_checkpoint_meta(*options.checkpoint).model_seed;
    weights = load_checkpoint_tensors(*options.checkpoint);
  } else {
    mc = cfg.model(train.spec.views, train.spec.height, train.spec.width);
  }
  if (mc.views != train.spec.views || mc.image_height != train.spec.height ||
      mc.image_width != train.spec.width) {
    throw ConfigError("probe: checkpoint geometry does not match the probe datasets");
  }
  const ProbeConfig pc = cfg.probe();
  nlohmann::ordered_json report;
  auto record = [](const ProbeMetrics& m) {
    return nlohmann::ordered_json{{"bev_occupancy_loss", m.bev_occupancy_loss}, {"iou", m.iou}};
  };
  if (weights) {
    report["pretrained"] = record(
        probe_finetune(mc, model_seed, weights, train.samples, eval.samples, train.spec.bev, pc));
  }
  report["random_init"] = record(
      probe_finetune(mc, model_seed, std::nullopt, train.samples, eval.samples, train.spec.bev, pc));
  out << report.dump() << '\n';
  return kExitOk;
}

}  // namespace geomim
