#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <limits>
#include <nlohmann/json_fwd.hpp>
#include <vector>

#include "geomim/tensor.hpp"

namespace geomim {

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

/// Camera-to-ego transform. Camera frame: x right, y down, z forward.
struct CameraExtrinsics {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

struct CameraView {
  CameraIntrinsics intrinsics;
  CameraExtrinsics extrinsics;
};

/// Per-view cameras sharing one image size.
struct CameraRig {
  std::vector<CameraView> views;
  int height = 0;
  int width = 0;

  std::size_t size() const { return views.size(); }
  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const;
};

/// Uniform depth bins over [d_min, d_max).
class DepthBins {
 public:
  DepthBins(double d_min, double d_max, int count);

  double d_min() const { return d_min_; }
  double d_max() const { return d_max_; }
  int count() const { return count_; }
  double width() const { return (d_max_ - d_min_) / count_; }
  double center(int b) const { return d_min_ + (b + 0.5) * width(); }
  std::vector<double> centers() const;
  /// Bin holding depth d, or -1 for d outside [d_min, d_max) or non-finite.
  int bin_of(double d) const;

 private:
  double d_min_;
  double d_max_;
  int count_;
};

Eigen::Vector3d pixel_to_ego(double u, double v, double depth, const CameraIntrinsics& intr,
                             const CameraExtrinsics& extr);
/// Inverse of pixel_to_ego: returns (u, v, depth).
Eigen::Vector3d ego_to_pixel(const Eigen::Vector3d& point, const CameraIntrinsics& intr,
                             const CameraExtrinsics& extr);

/// Ego coordinates of every (view, bin, token row, token col), row-major in
/// that order.
struct FrustumPoints {
  int views = 0;
  int bins = 0;
  int rows = 0;
  int cols = 0;
  std::vector<Eigen::Vector3d> points;

  const Eigen::Vector3d& at(int n, int b, int i, int j) const {
    return points[((static_cast<std::size_t>(n) * bins + b) * rows + i) * cols + j];
  }
};

FrustumPoints make_frustum(int rows, int cols, const DepthBins& bins, const CameraRig& rig,
                           int patch);

inline constexpr double kNoHit = std::numeric_limits<double>::infinity();

/// Per-view depth maps, row-major N x H x W; kNoHit where the ray escapes.
struct DepthMaps {
  int views = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int n, int y, int x) const {
    return values[(static_cast<std::size_t>(n) * height + y) * width + x];
  }
};

/// Minimum depth over each patch x patch block.
DepthMaps block_min_depth(const DepthMaps& full, int patch);

/// One-hot discrete depth plus validity, N x B x h x w and N x h x w.
struct DepthTarget {
  Tensor one_hot;
  std::vector<unsigned char> valid;
  int views = 0;
  int bins = 0;
  int rows = 0;
  int cols = 0;
};

DepthTarget depth_to_target(const DepthMaps& depth, const DepthBins& bins);

/// Ring of cameras at the ego origin, one every 360/N degrees of yaw,
/// looking horizontally outward.
CameraRig ring_rig(int views, int height, int width, double focal, double mount_height = 1.0,
                   double mount_radius = 0.3);

/// 16 camera parameters per view: fx/W, fy/H, cx/W, cy/H, the 9 rotation
/// entries row-major and the translation. Shape N x 16.
Tensor camera_parameter_matrix(const CameraRig& rig);

nlohmann::json rig_to_json(const CameraRig& rig);
CameraRig rig_from_json(const nlohmann::json& j, int height, int width);
void save_rig(const std::filesystem::path& path, const CameraRig& rig);
CameraRig load_rig(const std::filesystem::path& path, int height, int width);

}  // namespace geomim
