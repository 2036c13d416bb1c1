#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "geomim/dataset.hpp"
#include "geomim/model.hpp"
#include "geomim/trainer.hpp"

namespace geomim {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Sectioned key/value run configuration. Every key has a default; files and
/// flag overrides may only set known keys. Keys are addressed as
/// "section.key", e.g. "trainer.base_lr".
class RunConfig {
 public:
  RunConfig();

  /// All known keys in canonical order.
  const std::vector<std::string>& keys() const { return order_; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  /// Sets a known key; the value is checked when the typed view is built.
  void set(const std::string& key, const std::string& value);
  /// True when the key was set by a file or override rather than defaulted.
  bool explicitly_set(const std::string& key) const { return explicit_.count(key) > 0; }

  /// Merges an INI file ([section] then key = value lines).
  void merge_file(const std::filesystem::path& path);
  void merge_text(const std::string& text);

  /// Resolved configuration in the same INI format.
  std::string to_ini() const;

  // Typed views; each validates and throws ConfigError naming the key.
  DatasetSpec dataset() const;
  BevGridSpec bev() const;
  /// Image geometry (views, height, width) comes from the dataset.
  ModelConfig model(int views, int height, int width) const;
  std::uint64_t model_seed() const;
  TrainConfig trainer() const;
  ProbeConfig probe() const;
  /// Builds every typed view once so that bad values fail early.
  void validate() const;

 private:
  void define(const std::string& key, std::string value);
  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

}  // namespace geomim
