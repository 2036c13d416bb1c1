#include "geomim/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

namespace geomim {

namespace {

void to_little_endian(unsigned char* bytes) {
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + 8);
}

}  // namespace

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  nlohmann::json header = {{"name", name}, {"dtype", "f64"}, {"shape", t.shape()}};
  out << header.dump() << '\n';
  for (double v : t.values()) {
    unsigned char bytes[8];
    std::memcpy(bytes, &v, 8);
    to_little_endian(bytes);
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
  if (!out) throw std::runtime_error("write_tensor: stream failure writing '" + name + "'");
}

NamedTensor read_tensor(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_tensor: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("read_tensor: bad header: ") + e.what());
  }
  if (header.value("dtype", "") != "f64") {
    throw std::runtime_error("read_tensor: unsupported dtype in header " + line);
  }
  Shape shape = header.at("shape").get<Shape>();
  std::vector<double> values(numel_of(shape));
  for (double& v : values) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw std::runtime_error("read_tensor: truncated payload for " + line);
    to_little_endian(bytes);
    std::memcpy(&v, bytes, 8);
  }
  return {header.at("name").get<std::string>(), Tensor::from(std::move(shape), std::move(values))};
}

void save_tensor(const std::filesystem::path& path, const std::string& name, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(out, name, t);
}

NamedTensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace geomim
