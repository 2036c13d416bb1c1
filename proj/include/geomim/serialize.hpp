#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "geomim/tensor.hpp"

namespace geomim {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Tensor file layout: one JSON header line {"name", "dtype":"f64", "shape"}
/// terminated by '\n', then the values as raw little-endian f64.
void write_tensor(std::ostream& out, const std::string& name, const Tensor& t);
NamedTensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const std::string& name, const Tensor& t);
NamedTensor load_tensor(const std::filesystem::path& path);

}  // namespace geomim
