#include "geomim/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "geomim/ops.hpp"

namespace geomim {

namespace {

Tensor xavier(int in, int out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> v(static_cast<std::size_t>(in) * out);
  for (double& x : v) x = dist(rng);
  return Tensor::from({static_cast<std::size_t>(in), static_cast<std::size_t>(out)}, std::move(v),
                      true);
}

Tensor small_normal(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 0.02);
  std::vector<double> v(numel_of(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

bool contains(const std::vector<int>& v, int x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

void ModelConfig::validate() const {
  if (patch <= 0 || image_height % patch || image_width % patch) {
    throw std::invalid_argument("ModelConfig: image size must be divisible by patch");
  }
  if (views < 1 || dim < 4 || heads < 1 || dim % heads) {
    throw std::invalid_argument("ModelConfig: need views >= 1 and dim divisible by heads");
  }
  if (dim % 4) throw std::invalid_argument("ModelConfig: dim must be divisible by 4");
  if (decoder_depth < 2 || decoder_depth % 2) {
    throw std::invalid_argument("ModelConfig: decoder_depth must be even and >= 2");
  }
  if (encoder_depth < 0) throw std::invalid_argument("ModelConfig: encoder_depth < 0");
  for (int k : cva_blocks) {
    if (k < 1 || k > decoder_depth) {
      throw std::invalid_argument("ModelConfig: cva block index " + std::to_string(k) +
                                  " outside 1.." + std::to_string(decoder_depth));
    }
  }
  (void)bins();
}

Linear::Linear(int in, int out, std::mt19937_64& rng)
    : weight(xavier(in, out, rng)), bias(Tensor::zeros({static_cast<std::size_t>(out)}, true)) {}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(int dim)
    : gamma(Tensor::full({static_cast<std::size_t>(dim)}, 1.0, true)),
      beta(Tensor::zeros({static_cast<std::size_t>(dim)}, true)) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

MultiHeadAttention::MultiHeadAttention(int dim, int heads, std::mt19937_64& rng)
    : qkv(dim, 3 * dim, rng), proj(dim, dim, rng), heads(heads) {}

Tensor MultiHeadAttention::forward(const Tensor& x) const {
  if (x.rank() != 3) throw ShapeError("attention: expected (groups, tokens, C), got " +
                                      shape_str(x.shape()));
  const std::size_t g = x.dim(0), t = x.dim(1), c = x.dim(2);
  const std::size_t h = static_cast<std::size_t>(heads), dh = c / h;
  Tensor packed = qkv.forward(x);
  auto split_heads = [&](std::size_t which) {
    Tensor part = slice(packed, 2, which * c, c);
    return reshape(transpose(reshape(part, {g, t, h, dh}), 1, 2), {g * h, t, dh});
  };
  Tensor q = split_heads(0), k = split_heads(1), v = split_heads(2);
  Tensor ctx;
  {
    AttentionCoreScope core;
    Tensor scores = scale(matmul(q, transpose(k, 1, 2)), 1.0 / std::sqrt(static_cast<double>(dh)));
    ctx = matmul(softmax(scores, 2), v);
  }
  Tensor merged = reshape(transpose(reshape(ctx, {g, h, t, dh}), 1, 2), {g, t, c});
  return proj.forward(merged);
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) const {
  qkv.collect(prefix + ".qkv", out);
  proj.collect(prefix + ".proj", out);
}

TransformerBlock::TransformerBlock(int dim, int heads, int mlp_ratio, std::mt19937_64& rng)
    : norm1(dim),
      attn(dim, heads, rng),
      norm2(dim),
      fc1(dim, dim * mlp_ratio, rng),
      fc2(dim * mlp_ratio, dim, rng) {}

Tensor TransformerBlock::forward(const Tensor& x, const Tensor* attn_offset) const {
  Tensor attn_in = attn_offset ? add(x, *attn_offset) : x;
  Tensor y = add(x, attn.forward(norm1.forward(attn_in)));
  return add(y, fc2.forward(gelu(fc1.forward(norm2.forward(y)))));
}

void TransformerBlock::collect(const std::string& prefix, ParamList& out) const {
  norm1.collect(prefix + ".norm1", out);
  attn.collect(prefix + ".attn", out);
  norm2.collect(prefix + ".norm2", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

CrossViewBlock::CrossViewBlock(int views, int dim, int heads, int mlp_ratio, std::mt19937_64& rng)
    : block(dim, heads, mlp_ratio, rng),
      view_embed(small_normal({static_cast<std::size_t>(views), static_cast<std::size_t>(dim)},
                              rng)) {}

Tensor CrossViewBlock::forward(const Tensor& x, int rows, int cols) const {
  const std::size_t n = x.dim(0), c = x.dim(2);
  const std::size_t h = static_cast<std::size_t>(rows), w = static_cast<std::size_t>(cols);
  if (x.dim(1) != h * w || view_embed.dim(0) != n) {
    throw ShapeError("cross-view block: tokens " + shape_str(x.shape()) + " vs view embedding " +
                     shape_str(view_embed.shape()));
  }
  // (N, h, w*C) -> (h, N, w*C) -> (h, N*w, C): one group per token row.
  Tensor groups = reshape(transpose(reshape(x, {n, h, w * c}), 0, 1), {h, n * w, c});
  std::vector<std::size_t> view_of_slot(n * w);
  for (std::size_t s = 0; s < n * w; ++s) view_of_slot[s] = s / w;
  Tensor offset = gather(view_embed, view_of_slot);  // (N*w, C), broadcast over rows
  Tensor y = block.forward(groups, &offset);
  return reshape(transpose(reshape(y, {h, n, w * c}), 0, 1), {n, h * w, c});
}

void CrossViewBlock::collect(const std::string& prefix, ParamList& out) const {
  block.collect(prefix + ".block", out);
  out.push_back({prefix + ".view_embed", view_embed});
}

Tensor DecoderBlock::forward(const Tensor& x, int rows, int cols) const {
  return cross_view ? cva.forward(x, rows, cols) : per_view.forward(x);
}

void DecoderBlock::collect(const std::string& prefix, ParamList& out) const {
  if (cross_view) {
    cva.collect(prefix + ".cva", out);
  } else {
    per_view.collect(prefix, out);
  }
}

CameraGate::CameraGate(int dim, std::mt19937_64& rng) : fc1(16, dim / 4, rng), fc2(dim / 4, dim, rng) {}

Tensor CameraGate::gates(const CameraRig& rig) const {
  return sigmoid(fc2.forward(gelu(fc1.forward(camera_parameter_matrix(rig)))));
}

Tensor CameraGate::forward(const Tensor& features, const CameraRig& rig) const {
  const std::size_t n = features.dim(0), l = features.dim(1), c = features.dim(2);
  if (rig.size() != n) {
    throw std::invalid_argument("camera gate: rig has " + std::to_string(rig.size()) +
                                " views, features have " + std::to_string(n));
  }
  std::vector<std::size_t> view_of_token(n * l);
  for (std::size_t k = 0; k < n * l; ++k) view_of_token[k] = k / l;
  Tensor expanded = reshape(gather(gates(rig), view_of_token), {n, l, c});
  return mul(features, expanded);
}

void CameraGate::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

Tensor sincos_position_table(int rows, int cols, int dim) {
  // Half the channels encode the row, half the column; each half is sin|cos.
  const int quarter = dim / 4;
  std::vector<double> v(static_cast<std::size_t>(rows) * cols * dim, 0.0);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      double* out = v.data() + (static_cast<std::size_t>(i) * cols + j) * dim;
      for (int k = 0; k < quarter; ++k) {
        const double freq = 1.0 / std::pow(10000.0, static_cast<double>(k) / quarter);
        out[k] = std::sin(i * freq);
        out[quarter + k] = std::cos(i * freq);
        out[2 * quarter + k] = std::sin(j * freq);
        out[3 * quarter + k] = std::cos(j * freq);
      }
    }
  }
  return Tensor::from({static_cast<std::size_t>(rows) * cols, static_cast<std::size_t>(dim)},
                      std::move(v));
}

Encoder::Encoder(const ModelConfig& cfg, std::mt19937_64& rng)
    : patch_embed(cfg.patch_dim(), cfg.dim, rng),
      norm(cfg.dim),
      positions(sincos_position_table(cfg.rows(), cfg.cols(), cfg.dim)) {
  for (int k = 0; k < cfg.encoder_depth; ++k) {
    blocks.emplace_back(cfg.dim, cfg.heads, cfg.mlp_ratio, rng);
  }
}

Tensor Encoder::forward(const Tensor& patches, const MaskPattern& pattern) const {
  Tensor x = add(patch_embed.forward(patches), positions);
  x = select_visible(x, pattern);
  if (blocks.empty()) return x;
  for (const auto& b : blocks) x = b.forward(x);
  return norm.forward(x);
}

void Encoder::collect(const std::string& prefix, ParamList& out) const {
  patch_embed.collect(prefix + ".patch_embed", out);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    blocks[k].collect(prefix + ".blocks." + std::to_string(k), out);
  }
  if (!blocks.empty()) norm.collect(prefix + ".norm", out);
}

DecoderPair::DecoderPair(const ModelConfig& cfg, std::mt19937_64& rng)
    : positions(sincos_position_table(cfg.rows(), cfg.cols(), cfg.dim)),
      use_camera_gate(cfg.camera_gate),
      rows(cfg.rows()),
      cols(cfg.cols()),
      views(cfg.views) {
  const int half = cfg.decoder_depth / 2;
  auto make_block = [&](int index) {
    DecoderBlock b;
    b.cross_view = contains(cfg.cva_blocks, index);
    if (b.cross_view) {
      b.cva = CrossViewBlock(cfg.views, cfg.dim, cfg.heads, cfg.mlp_ratio, rng);
    } else {
      b.per_view = TransformerBlock(cfg.dim, cfg.heads, cfg.mlp_ratio, rng);
    }
    return b;
  };
  for (int k = 1; k <= half; ++k) shared_blocks.push_back(make_block(k));
  for (int k = half + 1; k <= 2 * half; ++k) sem_blocks.push_back(make_block(k));
  for (int k = half + 1; k <= 2 * half; ++k) geo_blocks.push_back(make_block(k));
  sem_norm = LayerNorm(cfg.dim);
  geo_norm = LayerNorm(cfg.dim);
  sem_head = Linear(cfg.dim, cfg.dim, rng);
  geo_head = Linear(cfg.dim, cfg.depth_bins, rng);
  camera_gate = CameraGate(cfg.dim, rng);
}

DecoderOutput DecoderPair::forward(const Tensor& filled, const CameraRig& rig) const {
  if (filled.rank() != 3 || filled.dim(1) != static_cast<std::size_t>(rows) * cols) {
    throw ShapeError("decode: expected (N, " + std::to_string(rows * cols) + ", C), got " +
                     shape_str(filled.shape()));
  }
  const std::size_t n = filled.dim(0);
  if (rig.size() != n || n != static_cast<std::size_t>(views)) {
    throw std::invalid_argument("decode: rig has " + std::to_string(rig.size()) +
                                " views, tokens have " + std::to_string(n) +
                                ", model expects " + std::to_string(views));
  }
  const std::size_t h = rows, w = cols, c = filled.dim(2);

  Tensor x = add(filled, positions);
  for (const auto& b : shared_blocks) x = b.forward(x, rows, cols);

  Tensor sem = x;
  for (const auto& b : sem_blocks) sem = b.forward(sem, rows, cols);
  Tensor geo = use_camera_gate ? camera_gate.forward(x, rig) : x;
  for (const auto& b : geo_blocks) geo = b.forward(geo, rows, cols);

  DecoderOutput out;
  out.sem_features = sem;
  out.geo_features = geo;
  Tensor sem_out = sem_head.forward(sem_norm.forward(sem));  // (N, hw, C)
  out.semantic = reshape(transpose(sem_out, 1, 2), {n, c, h, w});
  Tensor logits = geo_head.forward(geo_norm.forward(geo));  // (N, hw, B)
  const std::size_t bins = logits.dim(2);
  out.depth_logits = reshape(transpose(logits, 1, 2), {n, bins, h, w});
  out.depth_probs = softmax(out.depth_logits, 1);
  return out;
}

void DecoderPair::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t k = 0; k < shared_blocks.size(); ++k) {
    shared_blocks[k].collect(prefix + ".shared." + std::to_string(k), out);
  }
  for (std::size_t k = 0; k < sem_blocks.size(); ++k) {
    sem_blocks[k].collect(prefix + ".sem." + std::to_string(k), out);
  }
  for (std::size_t k = 0; k < geo_blocks.size(); ++k) {
    geo_blocks[k].collect(prefix + ".geo." + std::to_string(k), out);
  }
  sem_norm.collect(prefix + ".sem_norm", out);
  geo_norm.collect(prefix + ".geo_norm", out);
  sem_head.collect(prefix + ".sem_head", out);
  geo_head.collect(prefix + ".geo_head", out);
  camera_gate.collect(prefix + ".camera_gate", out);
}

GeoMimModel::GeoMimModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  encoder_ = Encoder(cfg_, rng);
  mask_token_ = small_normal({static_cast<std::size_t>(cfg_.dim)}, rng);
  decoder_ = DecoderPair(cfg_, rng);
}

TokenSet GeoMimModel::encode(const Tensor& images, const MaskPattern& pattern) const {
  TokenSet out;
  out.visible = encoder_.forward(patchify(images, cfg_.patch), pattern);
  for (int v = 0; v < pattern.views; ++v) out.positions.push_back(pattern.visible_positions(v));
  out.mask_token = mask_token_;
  return out;
}

DecoderOutput GeoMimModel::decode(const Tensor& filled, const CameraRig& rig) const {
  return decoder_.forward(filled, rig);
}

DecoderOutput GeoMimModel::forward(const Tensor& images, const MaskPattern& pattern,
                                   const CameraRig& rig) const {
  return decode(fill_mask(encode(images, pattern), pattern), rig);
}

ParamList GeoMimModel::parameters() const {
  ParamList out = encoder_parameters();
  out.push_back({"mask_token", mask_token_});
  decoder_.collect("decoder", out);
  return out;
}

ParamList GeoMimModel::encoder_parameters() const {
  ParamList out;
  encoder_.collect("encoder", out);
  return out;
}

}  // namespace geomim
