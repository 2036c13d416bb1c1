#include "geomim/scenegen.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numbers>
#include <random>

namespace geomim {

namespace {

constexpr int kMaxAttempts = 1000;
constexpr double kGroundAlbedo = 0.25;

double class_albedo(int class_id) { return 0.35 + 0.15 * (class_id % 5); }

const Eigen::Vector3d& light_direction() {
  static const Eigen::Vector3d dir = Eigen::Vector3d(0.4, 0.3, 0.87).normalized();
  return dir;
}

double interval_overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

}  // namespace

void SceneConfig::validate() const {
  if (min_objects < 1 || max_objects > 12 || min_objects > max_objects) {
    throw std::invalid_argument("SceneConfig: object count range must lie in [1, 12]");
  }
  if (!(min_footprint > 0) || min_footprint > max_footprint || !(min_height > 0) ||
      min_height > max_height) {
    throw std::invalid_argument("SceneConfig: sizes must be positive ranges");
  }
  if (!(extent > max_footprint)) throw std::invalid_argument("SceneConfig: extent too small");
  if (num_classes < 1 || num_classes > kTeacherClassSlots) {
    throw std::invalid_argument("SceneConfig: num_classes out of range");
  }
}

double bev_iou(const SceneObject& a, const SceneObject& b) {
  const double ox = interval_overlap(a.center.x() - a.size.x() / 2, a.center.x() + a.size.x() / 2,
                                     b.center.x() - b.size.x() / 2, b.center.x() + b.size.x() / 2);
  const double oy = interval_overlap(a.center.y() - a.size.y() / 2, a.center.y() + a.size.y() / 2,
                                     b.center.y() - b.size.y() / 2, b.center.y() + b.size.y() / 2);
  const double inter = ox * oy;
  const double uni = a.size.x() * a.size.y() + b.size.x() * b.size.y() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count_dist(cfg.min_objects, cfg.max_objects);
  std::uniform_real_distribution<double> foot(cfg.min_footprint, cfg.max_footprint);
  std::uniform_real_distribution<double> tall(cfg.min_height, cfg.max_height);
  std::uniform_int_distribution<int> cls(0, cfg.num_classes - 1);

  Scene scene;
  const int count = count_dist(rng);
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      SceneObject obj;
      obj.size = {foot(rng), foot(rng), tall(rng)};
      const double hx = cfg.extent - obj.size.x() / 2;
      const double hy = cfg.extent - obj.size.y() / 2;
      obj.center = {std::uniform_real_distribution<double>(-hx, hx)(rng),
                    std::uniform_real_distribution<double>(-hy, hy)(rng), obj.size.z() / 2};
      obj.class_id = cls(rng);
      const bool near_ego = std::abs(obj.center.x()) < cfg.ego_clearance + obj.size.x() / 2 &&
                            std::abs(obj.center.y()) < cfg.ego_clearance + obj.size.y() / 2;
      if (near_ego) continue;
      const bool overlaps = std::any_of(
          scene.objects.begin(), scene.objects.end(),
          [&](const SceneObject& other) { return bev_iou(obj, other) > cfg.max_bev_iou; });
      if (overlaps) continue;
      scene.objects.push_back(obj);
      placed = true;
    }
    if (!placed) {
      throw SceneGenerationError("generate_scene: could not place object " + std::to_string(k) +
                                 " after " + std::to_string(kMaxAttempts) + " attempts");
    }
  }
  return scene;
}

std::optional<double> ray_box_entry(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                    const SceneObject& box, int* hit_axis) {
  double t_near = -INFINITY;
  double t_far = INFINITY;
  int axis = -1;
  for (int k = 0; k < 3; ++k) {
    const double lo = box.center[k] - box.size[k] / 2;
    const double hi = box.center[k] + box.size[k] / 2;
    if (dir[k] == 0.0) {
      if (origin[k] < lo || origin[k] > hi) return std::nullopt;
      continue;
    }
    double t0 = (lo - origin[k]) / dir[k];
    double t1 = (hi - origin[k]) / dir[k];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) {
      t_near = t0;
      axis = k;
    }
    t_far = std::min(t_far, t1);
  }
  if (t_near > t_far || t_near <= 0.0) return std::nullopt;
  if (hit_axis) *hit_axis = axis;
  return t_near;
}

RenderedViews render_views(const Scene& scene, const CameraRig& rig) {
  rig.validate();
  const int n_views = static_cast<int>(rig.size());
  const int h = rig.height;
  const int w = rig.width;

  RenderedViews out;
  out.depth.views = n_views;
  out.depth.height = h;
  out.depth.width = w;
  out.depth.values.assign(static_cast<std::size_t>(n_views) * h * w, kNoHit);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> img(static_cast<std::size_t>(n_views) * 3 * plane, 0.0);

  for (int n = 0; n < n_views; ++n) {
    const auto& cam = rig.views[n];
    const Eigen::Vector3d origin = cam.extrinsics.translation;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        // Unit camera-z step, so the ray parameter is the camera-frame depth.
        const Eigen::Vector3d ray_cam((x + 0.5 - cam.intrinsics.cx) / cam.intrinsics.fx,
                                      (y + 0.5 - cam.intrinsics.cy) / cam.intrinsics.fy, 1.0);
        const Eigen::Vector3d dir = cam.extrinsics.rotation * ray_cam;
        double best = kNoHit;
        Eigen::Vector3d normal = Eigen::Vector3d::Zero();
        double albedo = 0.0;
        if (dir.z() < 0.0) {
          best = -origin.z() / dir.z();
          normal = Eigen::Vector3d::UnitZ();
          albedo = kGroundAlbedo;
        }
        for (const auto& obj : scene.objects) {
          int axis = 0;
          auto t = ray_box_entry(origin, dir, obj, &axis);
          if (t && *t < best) {
            best = *t;
            normal = Eigen::Vector3d::Zero();
            normal[axis] = dir[axis] > 0 ? -1.0 : 1.0;
            albedo = class_albedo(obj.class_id);
          }
        }
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        out.depth.values[n * plane + p] = best;
        const bool hit = std::isfinite(best);
        const double shade = hit ? std::max(0.2, normal.dot(light_direction())) : 0.0;
        img[(n * 3 + 0) * plane + p] = albedo * shade;
        img[(n * 3 + 1) * plane + p] = hit ? std::min(best / kDepthNormalization, 1.0) : 1.0;
        img[(n * 3 + 2) * plane + p] = hit ? 1.0 : 0.0;
      }
    }
  }
  out.images = Tensor::from({static_cast<std::size_t>(n_views), 3, static_cast<std::size_t>(h),
                             static_cast<std::size_t>(w)},
                            std::move(img));
  return out;
}

double cell_coverage(const SceneObject& obj, const BevGridSpec& spec, int ix, int iy) {
  const double x0 = spec.x_min + ix * spec.cell_x();
  const double y0 = spec.y_min + iy * spec.cell_y();
  const double ox = interval_overlap(x0, x0 + spec.cell_x(), obj.center.x() - obj.size.x() / 2,
                                     obj.center.x() + obj.size.x() / 2);
  const double oy = interval_overlap(y0, y0 + spec.cell_y(), obj.center.y() - obj.size.y() / 2,
                                     obj.center.y() + obj.size.y() / 2);
  return ox * oy / (spec.cell_x() * spec.cell_y());
}

namespace {

std::vector<std::vector<double>> teacher_embeddings(int channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Slot 0 is the background, slots 1.. the classes.
  std::vector<std::vector<double>> emb(kTeacherClassSlots + 1, std::vector<double>(channels));
  for (auto& e : emb) {
    double norm = 0.0;
    for (double& v : e) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : e) v /= norm;
  }
  return emb;
}

std::vector<double> cell_coverage_totals(const Scene& scene, const BevGridSpec& spec) {
  std::vector<double> total(spec.cells(), 0.0);
  for (const auto& obj : scene.objects) {
    for (int ix = 0; ix < spec.nx; ++ix) {
      for (int iy = 0; iy < spec.ny; ++iy) {
        total[static_cast<std::size_t>(ix) * spec.ny + iy] += cell_coverage(obj, spec, ix, iy);
      }
    }
  }
  return total;
}

}  // namespace

BevGrid teacher_bev(const Scene& scene, const BevGridSpec& spec, int channels,
                    std::uint64_t seed) {
  const auto emb = teacher_embeddings(channels, seed);
  const std::size_t cells = spec.cells();
  const auto totals = cell_coverage_totals(scene, spec);
  std::vector<double> raw(static_cast<std::size_t>(channels) * cells, 0.0);

  for (const auto& obj : scene.objects) {
    const auto& e = emb[1 + obj.class_id % kTeacherClassSlots];
    for (int ix = 0; ix < spec.nx; ++ix) {
      for (int iy = 0; iy < spec.ny; ++iy) {
        const std::size_t cell = static_cast<std::size_t>(ix) * spec.ny + iy;
        double cov = cell_coverage(obj, spec, ix, iy);
        if (cov <= 0.0) continue;
        if (totals[cell] > 1.0) cov /= totals[cell];
        for (int c = 0; c < channels; ++c) raw[c * cells + cell] += cov * e[c];
      }
    }
  }
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const double free = std::max(0.0, 1.0 - totals[cell]);
    if (free <= 0.0) continue;
    for (int c = 0; c < channels; ++c) raw[c * cells + cell] += free * kBackgroundScale * emb[0][c];
  }

  // 3x3 box blur averaging over in-bounds neighbours.
  std::vector<double> out(raw.size(), 0.0);
  for (int c = 0; c < channels; ++c) {
    for (int ix = 0; ix < spec.nx; ++ix) {
      for (int iy = 0; iy < spec.ny; ++iy) {
        double acc = 0.0;
        int count = 0;
        for (int dx = -1; dx <= 1; ++dx) {
          for (int dy = -1; dy <= 1; ++dy) {
            const int jx = ix + dx;
            const int jy = iy + dy;
            if (jx < 0 || jx >= spec.nx || jy < 0 || jy >= spec.ny) continue;
            acc += raw[c * cells + static_cast<std::size_t>(jx) * spec.ny + jy];
            ++count;
          }
        }
        out[c * cells + static_cast<std::size_t>(ix) * spec.ny + iy] = acc / count;
      }
    }
  }
  return {Tensor::from({static_cast<std::size_t>(channels), static_cast<std::size_t>(spec.nx),
                        static_cast<std::size_t>(spec.ny)},
                       std::move(out)),
          spec};
}

std::vector<double> occupancy_grid(const Scene& scene, const BevGridSpec& spec) {
  auto totals = cell_coverage_totals(scene, spec);
  for (double& v : totals) v = v >= 0.5 ? 1.0 : 0.0;
  return totals;
}

CameraRig sample_rig(std::uint64_t seed, int views, int height, int width, double focal) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  CameraRig rig = ring_rig(views, height, width, focal);
  for (auto& v : rig.views) {
    const double yaw = unit(rng) * 4.0 * std::numbers::pi / 180.0;
    const double f = focal * (1.0 + 0.05 * unit(rng));
    const double lift = 0.1 * unit(rng);
    const Eigen::Matrix3d rz = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    v.extrinsics.rotation = rz * v.extrinsics.rotation;
    v.extrinsics.translation = rz * v.extrinsics.translation;
    v.extrinsics.translation.z() += lift;
    v.intrinsics.fx = f;
    v.intrinsics.fy = f;
  }
  return rig;
}

nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : scene.objects) {
    objs.push_back({{"center", {o.center.x(), o.center.y(), o.center.z()}},
                    {"size", {o.size.x(), o.size.y(), o.size.z()}},
                    {"class_id", o.class_id}});
  }
  return {{"objects", objs}};
}

Scene scene_from_json(const nlohmann::json& j) {
  Scene scene;
  for (const auto& o : j.at("objects")) {
    const auto c = o.at("center").get<std::vector<double>>();
    const auto s = o.at("size").get<std::vector<double>>();
    if (c.size() != 3 || s.size() != 3) throw std::invalid_argument("scene object needs 3-vectors");
    scene.objects.push_back({{c[0], c[1], c[2]}, {s[0], s[1], s[2]}, o.at("class_id").get<int>()});
  }
  return scene;
}

}  // namespace geomim
