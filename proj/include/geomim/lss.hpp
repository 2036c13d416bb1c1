#pragma once

#include <cstddef>
#include <vector>

#include "geomim/bev.hpp"
#include "geomim/camera.hpp"
#include "geomim/tensor.hpp"

namespace geomim {

/// Which frustum points land in the grid, and where. Built once per rig.
struct SplatPlan {
  int views = 0;
  int bins = 0;
  int rows = 0;
  int cols = 0;
  BevGridSpec spec;
  /// Flat (n, b, i, j) frustum indices of in-extent points, ascending.
  std::vector<std::size_t> kept_points;
  /// Target cell (ix * ny + iy) of each kept point.
  std::vector<std::size_t> cells;

  std::size_t dropped() const {
    return static_cast<std::size_t>(views) * bins * rows * cols - kept_points.size();
  }
};

/// Pillar collapse: z is ignored; cells are half-open [edge, edge + cell).
SplatPlan make_splat_plan(const FrustumPoints& frustum, const BevGridSpec& spec);

/// Lift-splat: every (n, b, i, j) contributes D[n,b,i,j] * F[n,:,i,j] to its
/// cell, sum-pooled in ascending point order. semantic (N, C, h, w),
/// depth (N, B, h, w) -> grid (C, N_x, N_y). Differentiable in both inputs.
BevGrid lift_splat(const Tensor& semantic, const Tensor& depth, const SplatPlan& plan);
BevGrid lift_splat(const Tensor& semantic, const Tensor& depth, const FrustumPoints& frustum,
                   const BevGridSpec& spec);

}  // namespace geomim
