#include "geomim/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <sstream>

namespace geomim {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T out{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc() || res.ptr != last || text.empty()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b == std::string::npos) continue;
    out.push_back(parse_number<int>(key, item.substr(b, e - b + 1)));
  }
  return out;
}

template <typename F>
auto checked(F&& build) {
  try {
    return build();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

RunConfig::RunConfig() {
  const DatasetSpec d;
  const SceneConfig& s = d.scene;
  define("scenegen.views", std::to_string(d.views));
  define("scenegen.height", std::to_string(d.height));
  define("scenegen.width", std::to_string(d.width));
  define("scenegen.focal", format_double(d.focal));
  define("scenegen.scenes", std::to_string(d.scenes));
  define("scenegen.seed", std::to_string(d.seed));
  define("scenegen.min_objects", std::to_string(s.min_objects));
  define("scenegen.max_objects", std::to_string(s.max_objects));
  define("scenegen.min_footprint", format_double(s.min_footprint));
  define("scenegen.max_footprint", format_double(s.max_footprint));
  define("scenegen.min_height", format_double(s.min_height));
  define("scenegen.max_height", format_double(s.max_height));
  define("scenegen.extent", format_double(s.extent));
  define("scenegen.ego_clearance", format_double(s.ego_clearance));
  define("scenegen.max_bev_iou", format_double(s.max_bev_iou));
  define("scenegen.num_classes", std::to_string(s.num_classes));
  define("scenegen.teacher_channels", std::to_string(d.teacher_channels));

  const BevGridSpec& b = d.bev;
  define("lss.x_min", format_double(b.x_min));
  define("lss.x_max", format_double(b.x_max));
  define("lss.y_min", format_double(b.y_min));
  define("lss.y_max", format_double(b.y_max));
  define("lss.nx", std::to_string(b.nx));
  define("lss.ny", std::to_string(b.ny));

  const ModelConfig m;
  define("model.patch", std::to_string(m.patch));
  define("model.dim", std::to_string(m.dim));
  define("model.heads", std::to_string(m.heads));
  define("model.mlp_ratio", std::to_string(m.mlp_ratio));
  define("model.encoder_depth", std::to_string(m.encoder_depth));
  define("model.decoder_depth", std::to_string(m.decoder_depth));
  define("model.depth_bins", std::to_string(m.depth_bins));
  define("model.depth_min", format_double(m.depth_min));
  define("model.depth_max", format_double(m.depth_max));
  std::string cva;
  for (std::size_t i = 0; i < m.cva_blocks.size(); ++i) {
    cva += (i ? "," : "") + std::to_string(m.cva_blocks[i]);
  }
  define("model.cva_blocks", cva);
  define("model.camera_gate", m.camera_gate ? "true" : "false");
  define("model.seed", "0");

  const TrainConfig t;
  define("loss.alpha", format_double(t.alpha));
  define("loss.depth_activation", "softmax");

  define("trainer.total_steps", std::to_string(t.total_steps));
  define("trainer.warmup_steps", std::to_string(t.warmup_steps));
  define("trainer.base_lr", format_double(t.base_lr));
  define("trainer.weight_decay", format_double(t.weight_decay));
  define("trainer.beta1", format_double(t.beta1));
  define("trainer.beta2", format_double(t.beta2));
  define("trainer.eps", format_double(t.eps));
  define("trainer.mask_ratio", format_double(t.mask_ratio));
  define("trainer.batch_size", std::to_string(t.batch_size));
  define("trainer.seed", std::to_string(t.seed));
  define("trainer.checkpoint_every", std::to_string(t.checkpoint_every));

  const ProbeConfig p;
  define("probe.steps", std::to_string(p.steps));
  define("probe.lr", format_double(p.lr));
  define("probe.weight_decay", format_double(p.weight_decay));
  define("probe.hidden", std::to_string(p.hidden));
  define("probe.seed", std::to_string(p.seed));
  define("probe.threshold", format_double(p.threshold));
}

void RunConfig::define(const std::string& key, std::string value) {
  order_.push_back(key);
  values_[key] = std::move(value);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
  explicit_[key] = true;
}

void RunConfig::merge_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ConfigError("config key '" + section + "' must appear inside a [section]");
    }
    for (const auto& [key, node] : body) {
      set(section + "." + key, node.get_value<std::string>());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  merge_text(buf.str());
}

std::string RunConfig::to_ini() const {
  std::ostringstream out;
  std::string section;
  for (const auto& key : order_) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << '\n';
      out << '[' << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = " << values_.at(key) << '\n';
  }
  return out.str();
}

DatasetSpec RunConfig::dataset() const {
  return checked([&] {
    DatasetSpec d;
    auto i = [&](const char* k) { return parse_number<int>(k, get(k)); };
    auto f = [&](const char* k) { return parse_number<double>(k, get(k)); };
    d.views = i("scenegen.views");
    d.height = i("scenegen.height");
    d.width = i("scenegen.width");
    d.focal = f("scenegen.focal");
    d.scenes = i("scenegen.scenes");
    d.seed = parse_number<std::uint64_t>("scenegen.seed", get("scenegen.seed"));
    d.scene.min_objects = i("scenegen.min_objects");
    d.scene.max_objects = i("scenegen.max_objects");
    d.scene.min_footprint = f("scenegen.min_footprint");
    d.scene.max_footprint = f("scenegen.max_footprint");
    d.scene.min_height = f("scenegen.min_height");
    d.scene.max_height = f("scenegen.max_height");
    d.scene.extent = f("scenegen.extent");
    d.scene.ego_clearance = f("scenegen.ego_clearance");
    d.scene.max_bev_iou = f("scenegen.max_bev_iou");
    d.scene.num_classes = i("scenegen.num_classes");
    d.teacher_channels = i("scenegen.teacher_channels");
    d.bev = bev();
    d.scene.validate();
    if (d.views < 1 || d.height < 1 || d.width < 1 || !(d.focal > 0)) {
      throw ConfigError("scenegen: views, height, width and focal must be positive");
    }
    if (d.scenes < 0) throw ConfigError("scenegen.scenes must be >= 0");
    if (d.teacher_channels < 1) throw ConfigError("scenegen.teacher_channels must be >= 1");
    return d;
  });
}

BevGridSpec RunConfig::bev() const {
  BevGridSpec b;
  b.x_min = parse_number<double>("lss.x_min", get("lss.x_min"));
  b.x_max = parse_number<double>("lss.x_max", get("lss.x_max"));
  b.y_min = parse_number<double>("lss.y_min", get("lss.y_min"));
  b.y_max = parse_number<double>("lss.y_max", get("lss.y_max"));
  b.nx = parse_number<int>("lss.nx", get("lss.nx"));
  b.ny = parse_number<int>("lss.ny", get("lss.ny"));
  if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min) || b.nx < 1 || b.ny < 1) {
    throw ConfigError("lss: need x_max > x_min, y_max > y_min and nx, ny >= 1");
  }
  return b;
}

ModelConfig RunConfig::model(int views, int height, int width) const {
  return checked([&] {
    ModelConfig m;
    auto i = [&](const char* k) { return parse_number<int>(k, get(k)); };
    m.views = views;
    m.image_height = height;
    m.image_width = width;
    m.patch = i("model.patch");
    m.dim = i("model.dim");
    m.heads = i("model.heads");
    m.mlp_ratio = i("model.mlp_ratio");
    m.encoder_depth = i("model.encoder_depth");
    m.decoder_depth = i("model.decoder_depth");
    m.depth_bins = i("model.depth_bins");
    m.depth_min = parse_number<double>("model.depth_min", get("model.depth_min"));
    m.depth_max = parse_number<double>("model.depth_max", get("model.depth_max"));
    m.cva_blocks = parse_int_list("model.cva_blocks", get("model.cva_blocks"));
    m.camera_gate = parse_bool("model.camera_gate", get("model.camera_gate"));
    m.validate();
    return m;
  });
}

std::uint64_t RunConfig::model_seed() const {
  return parse_number<std::uint64_t>("model.seed", get("model.seed"));
}

TrainConfig RunConfig::trainer() const {
  return checked([&] {
    TrainConfig t;
    auto i = [&](const char* k) { return parse_number<int>(k, get(k)); };
    auto f = [&](const char* k) { return parse_number<double>(k, get(k)); };
    t.total_steps = i("trainer.total_steps");
    t.warmup_steps = i("trainer.warmup_steps");
    t.base_lr = f("trainer.base_lr");
    t.weight_decay = f("trainer.weight_decay");
    t.beta1 = f("trainer.beta1");
    t.beta2 = f("trainer.beta2");
    t.eps = f("trainer.eps");
    t.mask_ratio = f("trainer.mask_ratio");
    t.batch_size = i("trainer.batch_size");
    t.seed = parse_number<std::uint64_t>("trainer.seed", get("trainer.seed"));
    t.checkpoint_every = i("trainer.checkpoint_every");
    t.alpha = f("loss.alpha");
    const std::string& act = get("loss.depth_activation");
    if (act == "softmax") {
      t.depth_activation = DepthActivation::kSoftmax;
    } else if (act == "sigmoid") {
      t.depth_activation = DepthActivation::kSigmoid;
    } else {
      throw ConfigError("loss.depth_activation must be softmax or sigmoid, got '" + act + "'");
    }
    if (t.checkpoint_every < 0) throw ConfigError("trainer.checkpoint_every must be >= 0");
    t.validate();
    return t;
  });
}

ProbeConfig RunConfig::probe() const {
  ProbeConfig p;
  p.steps = parse_number<int>("probe.steps", get("probe.steps"));
  p.lr = parse_number<double>("probe.lr", get("probe.lr"));
  p.weight_decay = parse_number<double>("probe.weight_decay", get("probe.weight_decay"));
  p.hidden = parse_number<int>("probe.hidden", get("probe.hidden"));
  p.seed = parse_number<std::uint64_t>("probe.seed", get("probe.seed"));
  p.threshold = parse_number<double>("probe.threshold", get("probe.threshold"));
  if (p.steps < 0 || p.hidden < 1 || !(p.lr >= 0)) {
    throw ConfigError("probe: need steps >= 0, hidden >= 1 and lr >= 0");
  }
  return p;
}

void RunConfig::validate() const {
  const DatasetSpec d = dataset();
  (void)model(d.views, d.height, d.width);
  (void)model_seed();
  (void)probe();
  // The step count is often supplied later on the command line, so an
  // inconsistent warmup is reported when training starts.
}

}  // namespace geomim
