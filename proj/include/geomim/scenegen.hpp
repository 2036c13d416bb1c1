#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json_fwd.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "geomim/bev.hpp"
#include "geomim/camera.hpp"
#include "geomim/tensor.hpp"

namespace geomim {

struct SceneObject {
  Eigen::Vector3d center;  // ego meters; boxes rest on the ground plane
  Eigen::Vector3d size;    // full extents along x, y, z
  int class_id = 0;
};

struct Scene {
  std::vector<SceneObject> objects;
};

struct SceneConfig {
  int min_objects = 3;
  int max_objects = 8;
  double min_footprint = 0.8;
  double max_footprint = 2.2;
  double min_height = 0.8;
  double max_height = 1.8;
  double extent = 8.0;         // centers lie within [-extent, extent]^2
  double ego_clearance = 1.5;  // boxes keep off the rig at the origin
  double max_bev_iou = 0.5;
  int num_classes = 4;

  void validate() const;
};

class SceneGenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg);

double bev_iou(const SceneObject& a, const SceneObject& b);

struct RenderedViews {
  Tensor images;     // N x 3 x H x W: shaded albedo, normalized depth, hit mask
  DepthMaps depth;   // camera-z depth, kNoHit for escaping rays
};

inline constexpr double kDepthNormalization = 10.0;

RenderedViews render_views(const Scene& scene, const CameraRig& rig);

/// Nearest positive ray parameter where origin + t * dir enters the box, or
/// nullopt. Slab method.
std::optional<double> ray_box_entry(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                    const SceneObject& box, int* hit_axis = nullptr);

/// Fraction of each cell's area covered by the object's footprint.
double cell_coverage(const SceneObject& obj, const BevGridSpec& spec, int ix, int iy);

inline constexpr int kTeacherClassSlots = 16;
inline constexpr double kBackgroundScale = 0.1;

/// Rasterized oracle target: per-class unit embeddings weighted by cell
/// coverage, a 0.1-scaled background embedding on free area, then a 3x3 box
/// blur. Shape C x N_x x N_y.
BevGrid teacher_bev(const Scene& scene, const BevGridSpec& spec, int channels,
                    std::uint64_t seed);

/// Binary occupancy per cell (total coverage >= 0.5), row-major N_x x N_y.
std::vector<double> occupancy_grid(const Scene& scene, const BevGridSpec& spec);

/// Ring rig with per-sample jitter of yaw (+-4 deg), focal (+-5%) and mount
/// height (+-0.1 m).
CameraRig sample_rig(std::uint64_t seed, int views, int height, int width, double focal);

nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);

}  // namespace geomim
