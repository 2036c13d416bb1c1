#include "geomim/camera.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <stdexcept>
#include <string>

namespace geomim {

void CameraRig::validate() const {
  if (views.empty()) throw std::invalid_argument("camera rig has no views");
  if (height <= 0 || width <= 0) throw std::invalid_argument("camera rig image size not set");
  for (std::size_t n = 0; n < views.size(); ++n) {
    const auto& in = views[n].intrinsics;
    const auto& ex = views[n].extrinsics;
    const std::string tag = "view " + std::to_string(n) + ": ";
    if (!(in.fx > 0) || !(in.fy > 0)) throw std::invalid_argument(tag + "focal length <= 0");
    if (in.cx < 0 || in.cx >= width || in.cy < 0 || in.cy >= height) {
      throw std::invalid_argument(tag + "principal point outside the image");
    }
    const double ortho = (ex.rotation.transpose() * ex.rotation -
                          Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho > 1e-9) throw std::invalid_argument(tag + "rotation is not orthonormal");
    if (std::abs(ex.rotation.determinant() - 1.0) > 1e-9) {
      throw std::invalid_argument(tag + "rotation determinant is not +1");
    }
  }
}

DepthBins::DepthBins(double d_min, double d_max, int count)
    : d_min_(d_min), d_max_(d_max), count_(count) {
  if (count < 1) throw std::invalid_argument("DepthBins: need at least one bin");
  if (!(d_min > 0) || !(d_max > d_min)) {
    throw std::invalid_argument("DepthBins: need 0 < d_min < d_max");
  }
}

std::vector<double> DepthBins::centers() const {
  std::vector<double> c(count_);
  for (int b = 0; b < count_; ++b) c[b] = center(b);
  return c;
}

int DepthBins::bin_of(double d) const {
  if (!std::isfinite(d) || d < d_min_ || d >= d_max_) return -1;
  const int b = static_cast<int>(std::floor((d - d_min_) * count_ / (d_max_ - d_min_)));
  return std::min(b, count_ - 1);
}

Eigen::Vector3d pixel_to_ego(double u, double v, double depth, const CameraIntrinsics& intr,
                             const CameraExtrinsics& extr) {
  if (!(depth > 0)) {
    throw std::invalid_argument("pixel_to_ego: depth must be positive, got " +
                                std::to_string(depth));
  }
  const Eigen::Vector3d cam(depth * (u - intr.cx) / intr.fx, depth * (v - intr.cy) / intr.fy,
                            depth);
  return extr.rotation * cam + extr.translation;
}

Eigen::Vector3d ego_to_pixel(const Eigen::Vector3d& point, const CameraIntrinsics& intr,
                             const CameraExtrinsics& extr) {
  const Eigen::Vector3d cam = extr.rotation.transpose() * (point - extr.translation);
  return {intr.fx * cam.x() / cam.z() + intr.cx, intr.fy * cam.y() / cam.z() + intr.cy, cam.z()};
}

FrustumPoints make_frustum(int rows, int cols, const DepthBins& bins, const CameraRig& rig,
                           int patch) {
  if (patch * rows > rig.height || patch * cols > rig.width) {
    throw std::invalid_argument("make_frustum: token grid exceeds the image");
  }
  FrustumPoints f;
  f.views = static_cast<int>(rig.size());
  f.bins = bins.count();
  f.rows = rows;
  f.cols = cols;
  f.points.reserve(static_cast<std::size_t>(f.views) * f.bins * rows * cols);
  for (int n = 0; n < f.views; ++n) {
    const auto& cam = rig.views[n];
    for (int b = 0; b < f.bins; ++b) {
      const double d = bins.center(b);
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
          f.points.push_back(pixel_to_ego((j + 0.5) * patch, (i + 0.5) * patch, d,
                                          cam.intrinsics, cam.extrinsics));
        }
      }
    }
  }
  return f;
}

DepthMaps block_min_depth(const DepthMaps& full, int patch) {
  if (full.height % patch != 0 || full.width % patch != 0) {
    throw std::invalid_argument("block_min_depth: image not divisible by patch");
  }
  DepthMaps out;
  out.views = full.views;
  out.height = full.height / patch;
  out.width = full.width / patch;
  out.values.assign(static_cast<std::size_t>(out.views) * out.height * out.width, kNoHit);
  for (int n = 0; n < full.views; ++n) {
    for (int y = 0; y < full.height; ++y) {
      for (int x = 0; x < full.width; ++x) {
        double& dst =
            out.values[(static_cast<std::size_t>(n) * out.height + y / patch) * out.width +
                       x / patch];
        dst = std::min(dst, full.at(n, y, x));
      }
    }
  }
  return out;
}

DepthTarget depth_to_target(const DepthMaps& depth, const DepthBins& bins) {
  DepthTarget t;
  t.views = depth.views;
  t.bins = bins.count();
  t.rows = depth.height;
  t.cols = depth.width;
  const std::size_t plane = static_cast<std::size_t>(t.rows) * t.cols;
  std::vector<double> one_hot(static_cast<std::size_t>(t.views) * t.bins * plane, 0.0);
  t.valid.assign(static_cast<std::size_t>(t.views) * plane, 0);
  for (int n = 0; n < t.views; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const int b = bins.bin_of(depth.values[n * plane + p]);
      if (b < 0) continue;
      t.valid[n * plane + p] = 1;
      one_hot[(static_cast<std::size_t>(n) * t.bins + b) * plane + p] = 1.0;
    }
  }
  t.one_hot = Tensor::from({static_cast<std::size_t>(t.views), static_cast<std::size_t>(t.bins),
                            static_cast<std::size_t>(t.rows), static_cast<std::size_t>(t.cols)},
                           std::move(one_hot));
  return t;
}

CameraRig ring_rig(int views, int height, int width, double focal, double mount_height,
                   double mount_radius) {
  CameraRig rig;
  rig.height = height;
  rig.width = width;
  for (int n = 0; n < views; ++n) {
    const double yaw = 2.0 * std::numbers::pi * n / views;
    const Eigen::Vector3d forward(std::cos(yaw), std::sin(yaw), 0.0);
    const Eigen::Vector3d right(std::sin(yaw), -std::cos(yaw), 0.0);
    const Eigen::Vector3d down(0.0, 0.0, -1.0);
    CameraView v;
    v.intrinsics = {focal, focal, width / 2.0, height / 2.0};
    v.extrinsics.rotation.col(0) = right;
    v.extrinsics.rotation.col(1) = down;
    v.extrinsics.rotation.col(2) = forward;
    v.extrinsics.translation = mount_radius * forward + Eigen::Vector3d(0, 0, mount_height);
    rig.views.push_back(v);
  }
  return rig;
}

Tensor camera_parameter_matrix(const CameraRig& rig) {
  std::vector<double> values;
  values.reserve(rig.size() * 16);
  for (const auto& v : rig.views) {
    values.push_back(v.intrinsics.fx / rig.width);
    values.push_back(v.intrinsics.fy / rig.height);
    values.push_back(v.intrinsics.cx / rig.width);
    values.push_back(v.intrinsics.cy / rig.height);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) values.push_back(v.extrinsics.rotation(r, c));
    }
    for (int k = 0; k < 3; ++k) values.push_back(v.extrinsics.translation[k]);
  }
  return Tensor::from({rig.size(), 16}, std::move(values));
}

nlohmann::json rig_to_json(const CameraRig& rig) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& v : rig.views) {
    std::vector<double> rot;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) rot.push_back(v.extrinsics.rotation(r, c));
    }
    const auto& t = v.extrinsics.translation;
    arr.push_back({{"fx", v.intrinsics.fx},
                   {"fy", v.intrinsics.fy},
                   {"cx", v.intrinsics.cx},
                   {"cy", v.intrinsics.cy},
                   {"rotation", rot},
                   {"translation", std::vector<double>{t.x(), t.y(), t.z()}}});
  }
  return arr;
}

CameraRig rig_from_json(const nlohmann::json& j, int height, int width) {
  if (!j.is_array()) throw std::invalid_argument("rig description must be a JSON array");
  CameraRig rig;
  rig.height = height;
  rig.width = width;
  for (const auto& e : j) {
    CameraView v;
    v.intrinsics = {e.at("fx").get<double>(), e.at("fy").get<double>(),
                    e.at("cx").get<double>(), e.at("cy").get<double>()};
    const auto rot = e.at("rotation").get<std::vector<double>>();
    const auto tr = e.at("translation").get<std::vector<double>>();
    if (rot.size() != 9 || tr.size() != 3) {
      throw std::invalid_argument("rig entry needs 9 rotation and 3 translation values");
    }
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) v.extrinsics.rotation(r, c) = rot[r * 3 + c];
    }
    v.extrinsics.translation = {tr[0], tr[1], tr[2]};
    rig.views.push_back(v);
  }
  rig.validate();
  return rig;
}

void save_rig(const std::filesystem::path& path, const CameraRig& rig) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << rig_to_json(rig).dump(2) << '\n';
}

CameraRig load_rig(const std::filesystem::path& path, int height, int width) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return rig_from_json(nlohmann::json::parse(in), height, width);
}

}  // namespace geomim
