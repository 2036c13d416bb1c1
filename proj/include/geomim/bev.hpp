#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <utility>

#include "geomim/tensor.hpp"

namespace geomim {

/// Ground-plane grid over [x_min, x_max) x [y_min, y_max) with half-open cells.
struct BevGridSpec {
  double x_min = -8.0;
  double x_max = 8.0;
  double y_min = -8.0;
  double y_max = 8.0;
  int nx = 32;
  int ny = 32;

  double cell_x() const { return (x_max - x_min) / nx; }
  double cell_y() const { return (y_max - y_min) / ny; }
  std::size_t cells() const { return static_cast<std::size_t>(nx) * ny; }

  /// (ix, iy) of the cell holding (x, y), or nullopt when outside the extent.
  std::optional<std::pair<int, int>> cell_of(double x, double y) const {
    if (!(x >= x_min && x < x_max && y >= y_min && y < y_max)) return std::nullopt;
    const int ix = static_cast<int>(std::floor((x - x_min) / cell_x()));
    const int iy = static_cast<int>(std::floor((y - y_min) / cell_y()));
    if (ix < 0 || ix >= nx || iy < 0 || iy >= ny) return std::nullopt;
    return std::pair{ix, iy};
  }

  static BevGridSpec square(double half_extent, int cells) {
    return {-half_extent, half_extent, -half_extent, half_extent, cells, cells};
  }
};

/// C x N_x x N_y feature grid.
struct BevGrid {
  Tensor grid;
  BevGridSpec spec;
};

}  // namespace geomim
