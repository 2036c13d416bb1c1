#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "geomim/dataset.hpp"
#include "geomim/model.hpp"
#include "geomim/trainer.hpp"

namespace geomim {

struct CheckResult {
  std::string module;
  std::string name;
  double value = 0.0;      // measured error or count, whichever the check reports
  double tolerance = 0.0;  // pass iff value <= tolerance (or the check's own rule)
  bool passed = false;
  std::string detail;
  bool grad_check = false;  // value is a finite-difference relative error
};

struct VerifyOptions {
  /// Negative control: drop one in-extent point from the splat plan used by
  /// the LSS conservation check, which must then fail.
  bool corrupt_splat = false;
};

/// Gradient checks for every tensorcore primitive on random inputs in [-1, 1].
std::vector<CheckResult> primitive_grad_checks(std::uint64_t seed = 0);

/// Everything the end-to-end pipeline needs on the tiny configuration
/// (N=2, h=w=2, C=8, B=4).
struct TinyProblem {
  ModelConfig model_cfg;
  GeoMimModel model;
  Sample sample;
  PreparedSample prepared;
  MaskPattern pattern;
  TrainConfig train_cfg;
};
TinyProblem make_tiny_problem(std::uint64_t seed = 0);

/// Finite-difference checks of the full loss w.r.t. parameters along the
/// whole pipeline, plus the camera gate in isolation.
std::vector<CheckResult> pipeline_grad_checks(std::uint64_t seed = 0);

/// Runs the full invariant suite.
std::vector<CheckResult> run_verify_suite(const VerifyOptions& options = {});

/// Renders results as an aligned text table.
std::string format_report(const std::vector<CheckResult>& results);

/// Counted FLOPs and wall time of one attention block forward.
struct AttentionCost {
  std::uint64_t attention_flops = 0;  // QK^T and AV matmuls only
  std::uint64_t total_flops = 0;      // every matmul of the block
  double wall_ms = 0.0;               // best of `repeats`
};

/// Cross-view block over (views, rows*cols, dim) when `global` is false;
/// otherwise a plain block with global attention over all views*rows*cols
/// tokens.
AttentionCost measure_attention(int views, int rows, int cols, int dim, int heads, bool global,
                                int repeats = 1);

}  // namespace geomim
