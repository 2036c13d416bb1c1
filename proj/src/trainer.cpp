#include "geomim/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numbers>
#include <sstream>

#include "geomim/ops.hpp"
#include "geomim/serialize.hpp"

namespace geomim {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (total_steps < 0) throw std::invalid_argument("TrainConfig: total_steps < 0");
  if (total_steps > 0 && !(warmup_steps >= 0 && warmup_steps < total_steps)) {
    throw std::invalid_argument("TrainConfig: need 0 <= warmup_steps < total_steps (got " +
                                std::to_string(warmup_steps) + " and " +
                                std::to_string(total_steps) + ")");
  }
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    throw std::invalid_argument("TrainConfig: mask_ratio must lie in (0, 1)");
  }
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size < 1");
  if (!(base_lr >= 0.0) || !(weight_decay >= 0.0) || !(alpha >= 0.0)) {
    throw std::invalid_argument("TrainConfig: base_lr, weight_decay and alpha must be >= 0");
  }
}

double lr_schedule(int step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps) {
    return cfg.base_lr * static_cast<double>(step) / cfg.warmup_steps;
  }
  if (cfg.total_steps <= cfg.warmup_steps) return 0.0;
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(const ParamList& params, double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    auto p = Tensor(t).mutable_values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_) + weight_decay_ * p[i];
      p[i] -= lr * update;
    }
  }
}

std::string metrics_json_line(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["lr"] = m.lr;
  j["rec"] = m.rec;
  j["depth"] = m.depth;
  j["total"] = m.total;
  j["grad_norm"] = m.grad_norm;
  j["wall_ms"] = m.wall_ms;
  return j.dump();
}

PreparedSample prepare_sample(const Sample& sample, const ModelConfig& model_cfg,
                              const BevGridSpec& bev) {
  const DepthBins bins = model_cfg.bins();
  const FrustumPoints frustum =
      make_frustum(model_cfg.rows(), model_cfg.cols(), bins, sample.rig, model_cfg.patch);
  return {make_splat_plan(frustum, bev),
          depth_to_target(block_min_depth(sample.depth, model_cfg.patch), bins)};
}

namespace {

double l2(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

ForwardTrace forward_losses(const GeoMimModel& model, const Sample& sample,
                            const PreparedSample& prepared, const MaskPattern& pattern,
                            const TrainConfig& cfg) {
  ForwardTrace trace;
  TokenSet encoded = model.encode(sample.images, pattern);
  Tensor filled = fill_mask(encoded, pattern);
  DecoderOutput dec = model.decode(filled, sample.rig);
  BevGrid bev = lift_splat(dec.semantic, dec.depth_probs, prepared.plan);
  Tensor rec = rec_loss(bev, sample.teacher);
  Tensor probs = cfg.depth_activation == DepthActivation::kSoftmax ? dec.depth_probs
                                                                   : sigmoid(dec.depth_logits);
  DepthLoss depth = depth_loss(probs, prepared.depth_target);
  trace.losses = total_loss(rec, depth.value, cfg.alpha);
  trace.no_valid_depth = depth.no_valid_pixels;
  trace.norms = {{"images", l2(sample.images)},       {"encoded", l2(encoded.visible)},
                 {"mask_token", l2(encoded.mask_token)}, {"filled", l2(filled)},
                 {"semantic", l2(dec.semantic)},     {"depth_logits", l2(dec.depth_logits)},
                 {"bev", l2(bev.grid)},              {"teacher", l2(sample.teacher.grid)},
                 {"rec", rec.item()},                {"depth", depth.value.item()}};
  return trace;
}

Pretrainer::Pretrainer(GeoMimModel& model, const Dataset& data, TrainConfig cfg)
    : model_(model),
      data_(data),
      cfg_(cfg),
      opt_(cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay),
      rng_(cfg.seed),
      prepared_(data.samples.size()) {
  cfg_.validate();
  if (data.samples.empty()) throw std::invalid_argument("Pretrainer: empty dataset");
  const auto& mc = model.config();
  if (data.spec.views != mc.views || data.spec.height != mc.image_height ||
      data.spec.width != mc.image_width || data.spec.teacher_channels != mc.dim) {
    throw std::invalid_argument("Pretrainer: dataset geometry does not match the model config");
  }
}

StepMetrics Pretrainer::step() {
  const auto start = std::chrono::steady_clock::now();
  ++step_;
  StepMetrics m;
  m.step = step_;
  m.lr = lr_schedule(step_, cfg_);

  const auto& mc = model_.config();
  Tape::current().clear();
  Tensor total, rec, depth;
  std::map<std::string, double> norms;
  for (int k = 0; k < cfg_.batch_size; ++k) {
    std::uniform_int_distribution<std::size_t> pick(0, data_.samples.size() - 1);
    const std::size_t idx = pick(rng_);
    const std::uint64_t mask_seed = rng_();
    if (!prepared_[idx]) prepared_[idx] = prepare_sample(data_.samples[idx], mc, data_.spec.bev);
    const MaskPattern pattern = sample_mask(mask_seed, mc.rows(), mc.cols(), mc.views,
                                            cfg_.mask_ratio);
    ForwardTrace trace = forward_losses(model_, data_.samples[idx], *prepared_[idx], pattern, cfg_);
    norms = trace.norms;
    total = total.defined() ? add(total, trace.losses.total) : trace.losses.total;
    rec = rec.defined() ? add(rec, trace.losses.rec) : trace.losses.rec;
    depth = depth.defined() ? add(depth, trace.losses.depth) : trace.losses.depth;
  }
  const double inv = 1.0 / cfg_.batch_size;
  total = scale(total, inv);
  m.rec = rec.item() * inv;
  m.depth = depth.item() * inv;
  m.total = total.item();
  if (!std::isfinite(m.total)) {
    throw NumericAbort("non-finite loss at step " + std::to_string(step_), norms);
  }

  backward(total);
  const ParamList params = model_.parameters();
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  m.grad_norm = std::sqrt(sq);
  if (!std::isfinite(m.grad_norm)) {
    throw NumericAbort("non-finite gradient at step " + std::to_string(step_), norms);
  }
  opt_.step(params, m.lr);
  Tape::current().clear();
  m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                  .count();
  return m;
}

std::string Pretrainer::rng_state() const {
  std::ostringstream out;
  out << rng_;
  return out.str();
}

void Pretrainer::set_rng_state(const std::string& state) {
  std::istringstream in(state);
  in >> rng_;
  if (!in) throw std::invalid_argument("Pretrainer: malformed rng state");
}

nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  return {{"views", c.views},
          {"image_height", c.image_height},
          {"image_width", c.image_width},
          {"patch", c.patch},
          {"dim", c.dim},
          {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},
          {"encoder_depth", c.encoder_depth},
          {"decoder_depth", c.decoder_depth},
          {"depth_bins", c.depth_bins},
          {"depth_min", c.depth_min},
          {"depth_max", c.depth_max},
          {"cva_blocks", c.cva_blocks},
          {"camera_gate", c.camera_gate}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.views = j.at("views");
  c.image_height = j.at("image_height");
  c.image_width = j.at("image_width");
  c.patch = j.at("patch");
  c.dim = j.at("dim");
  c.heads = j.at("heads");
  c.mlp_ratio = j.at("mlp_ratio");
  c.encoder_depth = j.at("encoder_depth");
  c.decoder_depth = j.at("decoder_depth");
  c.depth_bins = j.at("depth_bins");
  c.depth_min = j.at("depth_min");
  c.depth_max = j.at("depth_max");
  c.cva_blocks = j.at("cva_blocks").get<std::vector<int>>();
  c.camera_gate = j.at("camera_gate");
  c.validate();
  return c;
}

std::string config_hash(const ModelConfig& c) {
  const auto j = model_config_to_json(c);
  // FNV-1a keeps the hash stable across standard libraries.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

void save_checkpoint(const fs::path& dir, const GeoMimModel& model, const CheckpointMeta& meta) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create checkpoint directory " + dir.string());
  }
  nlohmann::ordered_json names = nlohmann::ordered_json::array();
  for (const auto& [name, t] : model.parameters()) {
    save_tensor(dir / (name + ".bin"), name, t);
    names.push_back(name);
  }
  nlohmann::ordered_json j = {{"config_hash", meta.config_hash},
                              {"step", meta.step},
                              {"rng_state", meta.rng_state},
                              {"model_seed", meta.model_seed},
                              {"model", model_config_to_json(model.config())},
                              {"tensors", names}};
  std::ofstream out(dir / "meta.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "meta.json").string());
  out << j.dump(2) << '\n';
}

namespace {

nlohmann::json read_meta(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw std::runtime_error("checkpoint " + dir.string() + " has no meta.json");
  return nlohmann::json::parse(in);
}

void copy_into(const Tensor& dst, const Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw std::invalid_argument("checkpoint tensor '" + name + "' has shape " +
                                shape_str(src.shape()) + ", model expects " +
                                shape_str(dst.shape()));
  }
  auto out = Tensor(dst).mutable_values();
  std::copy(src.values().begin(), src.values().end(), out.begin());
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const fs::path& dir) {
  const auto j = read_meta(dir);
  return {j.at("config_hash"), j.at("step"), j.at("rng_state"), j.at("model_seed")};
}

CheckpointMeta load_checkpoint(const fs::path& dir, GeoMimModel& model) {
  const CheckpointMeta meta = read_checkpoint_meta(dir);
  if (meta.config_hash != config_hash(model.config())) {
    throw std::invalid_argument("checkpoint config hash " + meta.config_hash +
                                " does not match model config " + config_hash(model.config()));
  }
  for (const auto& [name, t] : model.parameters()) {
    copy_into(t, load_tensor(dir / (name + ".bin")).tensor, name);
  }
  return meta;
}

ModelConfig checkpoint_model_config(const fs::path& dir) {
  return model_config_from_json(read_meta(dir).at("model"));
}

ParamList load_checkpoint_tensors(const fs::path& dir) {
  const auto j = read_meta(dir);
  ParamList out;
  for (const auto& name : j.at("tensors")) {
    const std::string n = name.get<std::string>();
    if (n.rfind("encoder.", 0) != 0) continue;
    out.push_back({n, load_tensor(dir / (n + ".bin")).tensor});
  }
  return out;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) + " vs targets " +
                     shape_str(targets.shape()));
  }
  auto x = logits.values();
  auto t = targets.values();
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += std::max(x[i], 0.0) - x[i] * t[i] + std::log1p(std::exp(-std::abs(x[i])));
  }
  const double n = static_cast<double>(x.size());
  Tensor res = make_result({}, {total / n});
  return Tape::current().record("bce_with_logits", {logits}, res, [logits, targets, res, n] {
    const double g = res.grad()[0] / n;
    auto x = logits.values();
    auto t = targets.values();
    std::vector<double> gx(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                 : std::exp(x[i]) / (1.0 + std::exp(x[i]));
      gx[i] = g * (s - t[i]);
    }
    accumulate_grad(logits, gx);
  });
}

namespace {

/// Fixed per-sample geometry of the probe head.
struct ProbeGeometry {
  SplatPlan plan;
  Tensor inv_count;  // (cells, 1): 1 / points per cell, 0 for empty cells
  Tensor target;     // (1, cells) binary occupancy
};

ProbeGeometry probe_geometry(const Sample& s, const ModelConfig& mc, const BevGridSpec& bev) {
  ProbeGeometry g;
  g.plan = make_splat_plan(make_frustum(mc.rows(), mc.cols(), mc.bins(), s.rig, mc.patch), bev);
  std::vector<double> count(bev.cells(), 0.0);
  for (std::size_t cell : g.plan.cells) count[cell] += 1.0;
  for (auto& c : count) c = c > 0 ? 1.0 / c : 0.0;
  g.inv_count = Tensor::from({bev.cells(), 1}, std::move(count));
  g.target = Tensor::from({1, bev.cells()}, occupancy_grid(s.scene, bev));
  return g;
}

}  // namespace

ProbeMetrics probe_finetune(const ModelConfig& model_cfg, std::uint64_t model_seed,
                            const std::optional<ParamList>& encoder_weights,
                            const std::vector<Sample>& train, const std::vector<Sample>& eval,
                            const BevGridSpec& bev, const ProbeConfig& cfg) {
  if (train.empty() || eval.empty()) throw std::invalid_argument("probe: empty split");
  GeoMimModel base(model_cfg, model_seed);
  Encoder encoder = base.encoder();
  ParamList params = base.encoder_parameters();
  if (encoder_weights) {
    for (const auto& [name, dst] : params) {
      auto it = std::find_if(encoder_weights->begin(), encoder_weights->end(),
                             [&](const NamedTensor& n) { return n.name == name; });
      if (it == encoder_weights->end()) {
        throw std::invalid_argument("probe: checkpoint lacks encoder tensor '" + name + "'");
      }
      copy_into(dst, it->tensor, name);
    }
  }

  std::mt19937_64 rng(derive_seed(cfg.seed, model_seed, 7));
  Linear fc1(model_cfg.dim, cfg.hidden, rng);
  Linear fc2(cfg.hidden, model_cfg.depth_bins, rng);
  std::vector<ProbeGeometry> train_geo, eval_geo;
  for (const auto& s : train) train_geo.push_back(probe_geometry(s, model_cfg, bev));
  for (const auto& s : eval) eval_geo.push_back(probe_geometry(s, model_cfg, bev));
  // Start every cell at the log-odds of the training occupancy rate.
  double occupied = 0.0;
  for (const auto& g : train_geo) {
    for (double t : g.target.values()) occupied += t;
  }
  const double rate = std::clamp(occupied / (static_cast<double>(train.size()) * bev.cells()),
                                 1e-3, 1.0 - 1e-3);
  Tensor cell_bias = Tensor::full({bev.cells(), 1}, std::log(rate / (1.0 - rate)), true);
  fc1.collect("probe.fc1", params);
  fc2.collect("probe.fc2", params);
  params.push_back({"probe.cell_bias", cell_bias});

  const std::size_t views = static_cast<std::size_t>(model_cfg.views);
  const std::size_t tokens = static_cast<std::size_t>(model_cfg.rows()) * model_cfg.cols();
  const std::size_t bins = static_cast<std::size_t>(model_cfg.depth_bins);
  const MaskPattern full = MaskPattern::none(model_cfg.views, model_cfg.rows(), model_cfg.cols());
  // Per-token, per-bin occupancy logits averaged into the cells their frustum
  // points fall in, plus a per-cell bias.
  auto logits_of = [&](const Sample& s, const ProbeGeometry& g) {
    Tensor feat = encoder.forward(patchify(s.images, model_cfg.patch), full);
    Tensor per_bin = fc2.forward(gelu(fc1.forward(feat)));  // (N, h*w, B)
    Tensor points = reshape(transpose(per_bin, 1, 2), {views * bins * tokens, 1});
    Tensor pooled = scatter_add(Tensor::zeros({bev.cells(), 1}), g.plan.cells,
                                gather(points, g.plan.kept_points));
    return reshape(add(mul(pooled, g.inv_count), cell_bias), {1, bev.cells()});
  };

  ProbeMetrics out;
  AdamW opt(0.9, 0.999, 1e-8, cfg.weight_decay);
  for (int step = 0; step < cfg.steps; ++step) {
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    const std::size_t k = pick(rng);
    Tape::current().clear();
    Tensor loss = bce_with_logits(logits_of(train[k], train_geo[k]), train_geo[k].target);
    out.train_losses.push_back(loss.item());
    backward(loss);
    opt.step(params, cfg.lr);
  }
  Tape::current().clear();

  NoGradGuard no_grad;
  double loss_sum = 0.0, inter = 0.0, uni = 0.0;
  for (std::size_t e = 0; e < eval.size(); ++e) {
    Tensor logits = logits_of(eval[e], eval_geo[e]);
    const Tensor& target = eval_geo[e].target;
    loss_sum += bce_with_logits(logits, target).item();
    for (std::size_t i = 0; i < logits.numel(); ++i) {
      const double prob = 1.0 / (1.0 + std::exp(-logits[i]));
      const bool pred = prob > cfg.threshold;
      const bool truth = target[i] > 0.5;
      inter += (pred && truth) ? 1.0 : 0.0;
      uni += (pred || truth) ? 1.0 : 0.0;
    }
  }
  out.bev_occupancy_loss = loss_sum / static_cast<double>(eval.size());
  out.iou = uni > 0 ? inter / uni : 1.0;
  return out;
}

}  // namespace geomim
