#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geomim/bev.hpp"
#include "geomim/camera.hpp"
#include "geomim/scenegen.hpp"

namespace geomim {

/// Everything needed to regenerate a dataset bit for bit.
struct DatasetSpec {
  int views = 6;
  int height = 64;
  int width = 112;
  double focal = 80.0;
  SceneConfig scene;
  BevGridSpec bev = BevGridSpec::square(8.0, 32);
  int teacher_channels = 64;
  std::uint64_t seed = 0;
  int scenes = 64;
};

struct Sample {
  std::string id;
  Scene scene;
  CameraRig rig;
  Tensor images;  // N x 3 x H x W
  DepthMaps depth;
  BevGrid teacher;
};

/// Independent 64-bit seed for stream `stream` of item `index`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream);

Sample make_sample(const DatasetSpec& spec, int index);
std::vector<Sample> generate_samples(const DatasetSpec& spec);

/// Writes manifest.json plus one directory per sample holding images.bin,
/// depth.bin, teacher.bin, rig.json and scene.json.
void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec,
                   const std::vector<Sample>& samples);

struct Dataset {
  DatasetSpec spec;
  std::vector<Sample> samples;
};

Dataset load_dataset(const std::filesystem::path& dir);
Sample load_sample(const std::filesystem::path& sample_dir, const DatasetSpec& spec);
DatasetSpec read_manifest(const std::filesystem::path& dir);

}  // namespace geomim
