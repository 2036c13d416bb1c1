#pragma once

#include "geomim/bev.hpp"
#include "geomim/camera.hpp"
#include "geomim/tensor.hpp"

namespace geomim {

inline constexpr double kDefaultAlpha = 0.01;
inline constexpr double kProbabilityClamp = 1e-7;

/// Mean over all C * N_x * N_y elements of the squared difference.
Tensor rec_loss(const BevGrid& student, const BevGrid& teacher);

struct DepthLoss {
  Tensor value;
  bool no_valid_pixels = false;
};

/// Binary cross entropy of per-bin probabilities (N, B, h, w) against the
/// one-hot target, probabilities clamped to [1e-7, 1 - 1e-7]; mean over bins,
/// then over valid pixels. Zero (flagged) when no pixel is valid.
DepthLoss depth_loss(const Tensor& probs, const DepthTarget& target);

enum class DepthActivation { kSoftmax, kSigmoid };

struct LossTerms {
  Tensor rec;
  Tensor depth;
  Tensor total;
  double alpha = kDefaultAlpha;
};

/// total = rec + alpha * depth.
LossTerms total_loss(const Tensor& rec, const Tensor& depth, double alpha = kDefaultAlpha);

}  // namespace geomim
