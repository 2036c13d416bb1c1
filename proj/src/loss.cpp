#include "geomim/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "geomim/ops.hpp"

namespace geomim {

Tensor rec_loss(const BevGrid& student, const BevGrid& teacher) {
  if (student.grid.shape() != teacher.grid.shape()) {
    throw ShapeError("rec_loss: student grid " + shape_str(student.grid.shape()) +
                     " vs teacher grid " + shape_str(teacher.grid.shape()));
  }
  Tensor diff = sub(student.grid, teacher.grid);
  return mean(mul(diff, diff));
}

DepthLoss depth_loss(const Tensor& probs, const DepthTarget& target) {
  const Shape expect{static_cast<std::size_t>(target.views), static_cast<std::size_t>(target.bins),
                     static_cast<std::size_t>(target.rows), static_cast<std::size_t>(target.cols)};
  if (probs.shape() != expect || target.one_hot.shape() != expect) {
    throw ShapeError("depth_loss: probabilities " + shape_str(probs.shape()) + " vs target " +
                     shape_str(expect));
  }
  const std::size_t bins = expect[1];
  const std::size_t plane = expect[2] * expect[3];
  std::size_t valid = 0;
  for (auto v : target.valid) valid += v;

  auto p = probs.values();
  auto t = target.one_hot.values();
  double total = 0.0;
  if (valid > 0) {
    for (std::size_t n = 0; n < expect[0]; ++n) {
      for (std::size_t b = 0; b < bins; ++b) {
        for (std::size_t q = 0; q < plane; ++q) {
          if (!target.valid[n * plane + q]) continue;
          const std::size_t i = (n * bins + b) * plane + q;
          const double pc = std::clamp(p[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
          total -= t[i] * std::log(pc) + (1.0 - t[i]) * std::log(1.0 - pc);
        }
      }
    }
  }
  const double norm = valid > 0 ? 1.0 / (static_cast<double>(bins) * valid) : 0.0;
  Tensor res = make_result({}, {total * norm});
  Tensor target_hot = target.one_hot;
  std::vector<unsigned char> mask = target.valid;
  res = Tape::current().record(
      "bce", {probs}, res, [probs, res, target_hot, mask, norm, expect, bins, plane] {
        const double g = res.grad()[0] * norm;
        auto p = probs.values();
        auto t = target_hot.values();
        std::vector<double> gp(p.size(), 0.0);
        for (std::size_t n = 0; n < expect[0]; ++n) {
          for (std::size_t b = 0; b < bins; ++b) {
            for (std::size_t q = 0; q < plane; ++q) {
              if (!mask[n * plane + q]) continue;
              const std::size_t i = (n * bins + b) * plane + q;
              // Clamped probabilities carry no gradient.
              if (p[i] < kProbabilityClamp || p[i] > 1.0 - kProbabilityClamp) continue;
              gp[i] = g * (-t[i] / p[i] + (1.0 - t[i]) / (1.0 - p[i]));
            }
          }
        }
        accumulate_grad(probs, gp);
      });
  return {res, valid == 0};
}

LossTerms total_loss(const Tensor& rec, const Tensor& depth, double alpha) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("total_loss: alpha must be >= 0");
  return {rec, depth, add(rec, scale(depth, alpha)), alpha};
}

}  // namespace geomim
