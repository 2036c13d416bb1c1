#include "geomim/lss.hpp"

#include <string>

#include "geomim/ops.hpp"

namespace geomim {

SplatPlan make_splat_plan(const FrustumPoints& frustum, const BevGridSpec& spec) {
  SplatPlan plan;
  plan.views = frustum.views;
  plan.bins = frustum.bins;
  plan.rows = frustum.rows;
  plan.cols = frustum.cols;
  plan.spec = spec;
  for (std::size_t k = 0; k < frustum.points.size(); ++k) {
    const auto& p = frustum.points[k];
    if (auto cell = spec.cell_of(p.x(), p.y())) {
      plan.kept_points.push_back(k);
      plan.cells.push_back(static_cast<std::size_t>(cell->first) * spec.ny + cell->second);
    }
  }
  return plan;
}

BevGrid lift_splat(const Tensor& semantic, const Tensor& depth, const SplatPlan& plan) {
  const Shape expect_sem_tail{static_cast<std::size_t>(plan.rows),
                              static_cast<std::size_t>(plan.cols)};
  if (semantic.rank() != 4 || depth.rank() != 4 ||
      semantic.dim(0) != static_cast<std::size_t>(plan.views) ||
      depth.dim(0) != static_cast<std::size_t>(plan.views) ||
      depth.dim(1) != static_cast<std::size_t>(plan.bins) ||
      semantic.dim(2) != expect_sem_tail[0] || semantic.dim(3) != expect_sem_tail[1] ||
      depth.dim(2) != expect_sem_tail[0] || depth.dim(3) != expect_sem_tail[1]) {
    throw ShapeError("lift_splat: semantic " + shape_str(semantic.shape()) + " and depth " +
                     shape_str(depth.shape()) + " do not match a frustum of " +
                     std::to_string(plan.views) + " views, " + std::to_string(plan.bins) +
                     " bins, " + std::to_string(plan.rows) + "x" + std::to_string(plan.cols));
  }
  const std::size_t n = semantic.dim(0), c = semantic.dim(1);
  const std::size_t bins = depth.dim(1);
  const std::size_t pix = semantic.dim(2) * semantic.dim(3);

  // Feature rows per pixel: (N*h*w, C).
  Tensor feat = reshape(transpose(reshape(semantic, {n, c, pix}), 1, 2), {n * pix, c});
  // Feature row for each kept point (n, b, p) is n * pix + p.
  std::vector<std::size_t> feat_rows(plan.kept_points.size());
  for (std::size_t k = 0; k < feat_rows.size(); ++k) {
    const std::size_t flat = plan.kept_points[k];
    const std::size_t view = flat / (bins * pix);
    feat_rows[k] = view * pix + flat % pix;
  }
  const std::size_t kept = plan.kept_points.size();
  Tensor point_feat = reshape(gather(feat, feat_rows), {kept, 1, c});
  Tensor point_prob = reshape(gather(reshape(depth, {n * bins * pix, 1}), plan.kept_points),
                              {kept, 1, 1});
  // Outer product per point, as a batched (1x1)(1xC) product.
  Tensor contrib = reshape(matmul(point_prob, point_feat), {kept, c});

  Tensor cells = Tensor::zeros({plan.spec.cells(), c});
  cells = scatter_add(cells, plan.cells, contrib);
  Tensor grid = reshape(transpose(cells, 0, 1),
                        {c, static_cast<std::size_t>(plan.spec.nx),
                         static_cast<std::size_t>(plan.spec.ny)});
  return {grid, plan.spec};
}

BevGrid lift_splat(const Tensor& semantic, const Tensor& depth, const FrustumPoints& frustum,
                   const BevGridSpec& spec) {
  return lift_splat(semantic, depth, make_splat_plan(frustum, spec));
}

}  // namespace geomim
