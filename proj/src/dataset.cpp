#include "geomim/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>

#include "geomim/serialize.hpp"

namespace geomim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "geomim-dataset/1";

json spec_to_json(const DatasetSpec& s) {
  const auto& c = s.scene;
  return {{"format", kFormat},
          {"views", s.views},
          {"height", s.height},
          {"width", s.width},
          {"focal", s.focal},
          {"seed", s.seed},
          {"scenes", s.scenes},
          {"scene_config",
           {{"min_objects", c.min_objects},
            {"max_objects", c.max_objects},
            {"min_footprint", c.min_footprint},
            {"max_footprint", c.max_footprint},
            {"min_height", c.min_height},
            {"max_height", c.max_height},
            {"extent", c.extent},
            {"ego_clearance", c.ego_clearance},
            {"max_bev_iou", c.max_bev_iou},
            {"num_classes", c.num_classes}}},
          {"teacher",
           {{"channels", s.teacher_channels},
            {"seed", s.seed},
            {"bev",
             {{"x_min", s.bev.x_min},
              {"x_max", s.bev.x_max},
              {"y_min", s.bev.y_min},
              {"y_max", s.bev.y_max},
              {"nx", s.bev.nx},
              {"ny", s.bev.ny}}}}}};
}

DatasetSpec spec_from_json(const json& j) {
  if (j.value("format", "") != kFormat) {
    throw std::runtime_error("manifest: unsupported dataset format");
  }
  DatasetSpec s;
  s.views = j.at("views");
  s.height = j.at("height");
  s.width = j.at("width");
  s.focal = j.at("focal");
  s.seed = j.at("seed");
  s.scenes = j.at("scenes");
  const auto& c = j.at("scene_config");
  s.scene.min_objects = c.at("min_objects");
  s.scene.max_objects = c.at("max_objects");
  s.scene.min_footprint = c.at("min_footprint");
  s.scene.max_footprint = c.at("max_footprint");
  s.scene.min_height = c.at("min_height");
  s.scene.max_height = c.at("max_height");
  s.scene.extent = c.at("extent");
  s.scene.ego_clearance = c.at("ego_clearance");
  s.scene.max_bev_iou = c.at("max_bev_iou");
  s.scene.num_classes = c.at("num_classes");
  const auto& t = j.at("teacher");
  s.teacher_channels = t.at("channels");
  const auto& b = t.at("bev");
  s.bev = {b.at("x_min"), b.at("x_max"), b.at("y_min"), b.at("y_max"), b.at("nx"), b.at("ny")};
  return s;
}

std::string sample_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04d", index);
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return json::parse(in);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Sample make_sample(const DatasetSpec& spec, int index) {
  Sample s;
  s.id = sample_id(index);
  s.scene = generate_scene(derive_seed(spec.seed, index, 0), spec.scene);
  s.rig = sample_rig(derive_seed(spec.seed, index, 1), spec.views, spec.height, spec.width,
                     spec.focal);
  RenderedViews views = render_views(s.scene, s.rig);
  s.images = views.images;
  s.depth = std::move(views.depth);
  s.teacher = teacher_bev(s.scene, spec.bev, spec.teacher_channels, spec.seed);
  return s;
}

std::vector<Sample> generate_samples(const DatasetSpec& spec) {
  std::vector<Sample> out;
  out.reserve(spec.scenes);
  for (int i = 0; i < spec.scenes; ++i) out.push_back(make_sample(spec, i));
  return out;
}

void write_dataset(const fs::path& dir, const DatasetSpec& spec,
                   const std::vector<Sample>& samples) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create dataset directory " + dir.string() + ": " +
                             ec.message());
  }
  json manifest = spec_to_json(spec);
  json ids = json::array();
  for (const auto& s : samples) {
    ids.push_back(s.id);
    const fs::path sd = dir / s.id;
    fs::create_directories(sd, ec);
    if (ec) throw std::runtime_error("cannot create " + sd.string() + ": " + ec.message());
    save_tensor(sd / "images.bin", "images", s.images);
    save_tensor(sd / "depth.bin", "depth",
                Tensor::from({static_cast<std::size_t>(s.depth.views),
                              static_cast<std::size_t>(s.depth.height),
                              static_cast<std::size_t>(s.depth.width)},
                             s.depth.values));
    save_tensor(sd / "teacher.bin", "teacher", s.teacher.grid);
    save_rig(sd / "rig.json", s.rig);
    write_json(sd / "scene.json", scene_to_json(s.scene));
  }
  manifest["samples"] = ids;
  write_json(dir / "manifest.json", manifest);
}

DatasetSpec read_manifest(const fs::path& dir) {
  return spec_from_json(read_json(dir / "manifest.json"));
}

Sample load_sample(const fs::path& sample_dir, const DatasetSpec& spec) {
  Sample s;
  s.id = sample_dir.filename().string();
  s.scene = scene_from_json(read_json(sample_dir / "scene.json"));
  s.rig = load_rig(sample_dir / "rig.json", spec.height, spec.width);
  s.images = load_tensor(sample_dir / "images.bin").tensor;
  Tensor depth = load_tensor(sample_dir / "depth.bin").tensor;
  if (depth.rank() != 3) throw std::runtime_error("depth.bin must be (N, H, W)");
  s.depth.views = static_cast<int>(depth.dim(0));
  s.depth.height = static_cast<int>(depth.dim(1));
  s.depth.width = static_cast<int>(depth.dim(2));
  s.depth.values.assign(depth.values().begin(), depth.values().end());
  s.teacher = {load_tensor(sample_dir / "teacher.bin").tensor, spec.bev};
  return s;
}

Dataset load_dataset(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  Dataset ds;
  ds.spec = spec_from_json(manifest);
  for (const auto& id : manifest.at("samples")) {
    ds.samples.push_back(load_sample(dir / id.get<std::string>(), ds.spec));
  }
  return ds;
}

}  // namespace geomim
