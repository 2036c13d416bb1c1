#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "geomim/bev.hpp"
#include "geomim/dataset.hpp"
#include "geomim/loss.hpp"
#include "geomim/lss.hpp"
#include "geomim/model.hpp"

namespace geomim {

struct TrainConfig {
  int total_steps = 1000;
  int warmup_steps = 500;
  double base_lr = 2e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double alpha = kDefaultAlpha;
  DepthActivation depth_activation = DepthActivation::kSoftmax;
  double mask_ratio = 0.5;
  int batch_size = 1;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only the final checkpoint

  void validate() const;
};

/// Linear warmup to base_lr, then cosine decay to 0 at total_steps.
double lr_schedule(int step, const TrainConfig& cfg);

/// Adam with decoupled weight decay; the decay is scaled by the learning rate.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay);

  /// Parameters without a gradient are skipped.
  void step(const ParamList& params, double lr);
  std::int64_t steps() const { return steps_; }
  const std::map<std::string, std::vector<double>>& first_moments() const { return m_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::int64_t steps_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

/// Raised when a step produces a non-finite loss. `diagnostics` lists the L2
/// norm of each intermediate of the failing forward pass.
class NumericAbort : public std::runtime_error {
 public:
  NumericAbort(const std::string& what, std::map<std::string, double> diagnostics)
      : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}
  const std::map<std::string, double>& diagnostics() const { return diagnostics_; }

 private:
  std::map<std::string, double> diagnostics_;
};

struct StepMetrics {
  int step = 0;
  double lr = 0.0;
  double rec = 0.0;
  double depth = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

/// One line of metrics.jsonl.
std::string metrics_json_line(const StepMetrics& m);

/// Per-sample geometry reused across steps.
struct PreparedSample {
  SplatPlan plan;
  DepthTarget depth_target;
};

PreparedSample prepare_sample(const Sample& sample, const ModelConfig& model_cfg,
                              const BevGridSpec& bev);

struct ForwardTrace {
  LossTerms losses;
  bool no_valid_depth = false;
  std::map<std::string, double> norms;
};

/// patchify -> mask -> encode -> fill_mask -> decode -> lift_splat -> losses
/// for one sample, recorded on the current tape.
ForwardTrace forward_losses(const GeoMimModel& model, const Sample& sample,
                            const PreparedSample& prepared, const MaskPattern& pattern,
                            const TrainConfig& cfg);

class Pretrainer {
 public:
  Pretrainer(GeoMimModel& model, const Dataset& data, TrainConfig cfg);

  /// Runs the next step (1-indexed) and returns its metrics.
  StepMetrics step();
  int completed_steps() const { return step_; }
  std::string rng_state() const;
  void set_rng_state(const std::string& state);
  void set_completed_steps(int step) { step_ = step; }
  const TrainConfig& config() const { return cfg_; }

 private:
  GeoMimModel& model_;
  const Dataset& data_;
  TrainConfig cfg_;
  AdamW opt_;
  std::mt19937_64 rng_;
  int step_ = 0;
  std::vector<std::optional<PreparedSample>> prepared_;
};

std::string config_hash(const ModelConfig& cfg);

struct CheckpointMeta {
  std::string config_hash;
  int step = 0;
  std::string rng_state;
  std::uint64_t model_seed = 0;  // initialization seed, reused by probe controls
};

/// Directory of `<name>.bin` tensors plus meta.json (config hash, step, rng
/// state, model config and tensor names).
void save_checkpoint(const std::filesystem::path& dir, const GeoMimModel& model,
                     const CheckpointMeta& meta);
/// Loads named tensors into `model`; throws on a config hash or shape mismatch.
CheckpointMeta load_checkpoint(const std::filesystem::path& dir, GeoMimModel& model);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir);
/// Model configuration recorded in a checkpoint's meta.json.
ModelConfig checkpoint_model_config(const std::filesystem::path& dir);
/// Loads only the encoder tensors of a checkpoint.
ParamList load_checkpoint_tensors(const std::filesystem::path& dir);

struct ProbeConfig {
  int steps = 150;
  double lr = 1e-3;
  double weight_decay = 0.05;
  int hidden = 16;
  std::uint64_t seed = 0;
  double threshold = 0.5;
};

struct ProbeMetrics {
  double bev_occupancy_loss = 0.0;
  double iou = 0.0;
  std::vector<double> train_losses;
};

/// Fine-tunes an encoder plus a fresh two-layer occupancy head on `train`,
/// then evaluates sigmoid cross entropy and IoU on `eval`. The head maps each
/// token through C -> hidden (GELU) -> B per-depth-bin occupancy logits; the
/// fixed frustum geometry of the sample's rig then averages those logits into
/// the BEV cells their points fall in, and a learned per-cell bias is added.
/// The encoder starts from `encoder_weights` when given, otherwise from the
/// model initialization for `model_seed`. No mask is applied and no decoder
/// is involved.
ProbeMetrics probe_finetune(const ModelConfig& model_cfg, std::uint64_t model_seed,
                            const std::optional<ParamList>& encoder_weights,
                            const std::vector<Sample>& train, const std::vector<Sample>& eval,
                            const BevGridSpec& bev, const ProbeConfig& cfg);

/// Sigmoid cross entropy on logits, mean over elements.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

}  // namespace geomim
