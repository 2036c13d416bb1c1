#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "geomim/camera.hpp"
#include "geomim/masking.hpp"
#include "geomim/serialize.hpp"
#include "geomim/tensor.hpp"

namespace geomim {

struct ModelConfig {
  int views = 6;
  int image_height = 64;
  int image_width = 112;
  int patch = 16;
  int dim = 64;
  int heads = 4;
  int mlp_ratio = 4;
  int encoder_depth = 4;
  int decoder_depth = 8;  // first half shared by both branches
  int depth_bins = 16;
  double depth_min = 1.0;
  double depth_max = 9.0;
  // 1-indexed positions in the decoder pipeline whose attention is cross-view.
  std::vector<int> cva_blocks = {2, 6};
  bool camera_gate = true;

  int rows() const { return image_height / patch; }
  int cols() const { return image_width / patch; }
  int patch_dim() const { return 3 * patch * patch; }
  DepthBins bins() const { return {depth_min, depth_max, depth_bins}; }
  void validate() const;
};

using ParamList = std::vector<NamedTensor>;

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out

  Linear() = default;
  Linear(int in, int out, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(int dim);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Multi-head self-attention over the middle axis of (groups, tokens, C).
struct MultiHeadAttention {
  Linear qkv;
  Linear proj;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(int dim, int heads, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Pre-norm attention + GELU MLP with residuals, on (groups, tokens, C).
struct TransformerBlock {
  LayerNorm norm1;
  MultiHeadAttention attn;
  LayerNorm norm2;
  Linear fc1;
  Linear fc2;

  TransformerBlock() = default;
  TransformerBlock(int dim, int heads, int mlp_ratio, std::mt19937_64& rng);
  /// `attn_offset`, when given, is added to the attention input only and must
  /// broadcast over the leading axis of x.
  Tensor forward(const Tensor& x, const Tensor* attn_offset = nullptr) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Row-grouped attention across views: every token attends to the N*w tokens
/// sharing its token row, over all views, and to nothing else.
struct CrossViewBlock {
  TransformerBlock block;
  Tensor view_embed;  // N x C

  CrossViewBlock() = default;
  CrossViewBlock(int views, int dim, int heads, int mlp_ratio, std::mt19937_64& rng);
  /// x: (N, rows*cols, C) -> same shape.
  Tensor forward(const Tensor& x, int rows, int cols) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Decoder block: per-view self-attention, or cross-view when `cross_view`.
struct DecoderBlock {
  bool cross_view = false;
  TransformerBlock per_view;
  CrossViewBlock cva;

  Tensor forward(const Tensor& x, int rows, int cols) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Squeeze-excitation gate from per-view camera parameters:
/// 16 -> C/4 -> GELU -> C -> sigmoid, multiplied onto every token of the view.
struct CameraGate {
  Linear fc1;
  Linear fc2;

  CameraGate() = default;
  CameraGate(int dim, std::mt19937_64& rng);
  /// (N, C) gate values in (0, 1).
  Tensor gates(const CameraRig& rig) const;
  Tensor forward(const Tensor& features, const CameraRig& rig) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Fixed 2D sine-cosine position table, (rows*cols, dim).
Tensor sincos_position_table(int rows, int cols, int dim);

struct Encoder {
  Linear patch_embed;
  std::vector<TransformerBlock> blocks;
  LayerNorm norm;
  Tensor positions;  // constant (rows*cols, C)

  Encoder() = default;
  Encoder(const ModelConfig& cfg, std::mt19937_64& rng);
  /// Embeds all patches (N, rows*cols, 3*p*p) and runs the per-view stack on
  /// the visible ones. No cross-view mixing.
  Tensor forward(const Tensor& patches, const MaskPattern& pattern) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct DecoderOutput {
  Tensor semantic;      // N x C x h x w
  Tensor depth_logits;  // N x B x h x w
  Tensor depth_probs;   // N x B x h x w, softmax over B
  Tensor sem_features;  // N x h*w x C, semantic branch before its head
  Tensor geo_features;  // N x h*w x C, geometry branch before its head
};

struct DecoderPair {
  std::vector<DecoderBlock> shared_blocks;
  std::vector<DecoderBlock> sem_blocks;
  std::vector<DecoderBlock> geo_blocks;
  LayerNorm sem_norm;
  LayerNorm geo_norm;
  Linear sem_head;
  Linear geo_head;
  CameraGate camera_gate;
  Tensor positions;
  bool use_camera_gate = true;
  int rows = 0;
  int cols = 0;
  int views = 0;

  DecoderPair() = default;
  DecoderPair(const ModelConfig& cfg, std::mt19937_64& rng);
  DecoderOutput forward(const Tensor& filled, const CameraRig& rig) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct ModelOutput {
  MaskPattern pattern;
  DecoderOutput decoded;
};

/// Encoder, shared mask token and the decoupled decoders.
class GeoMimModel {
 public:
  GeoMimModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  TokenSet encode(const Tensor& images, const MaskPattern& pattern) const;
  DecoderOutput decode(const Tensor& filled, const CameraRig& rig) const;
  /// images (N, 3, H, W) through patchify, encode, fill_mask and decode.
  DecoderOutput forward(const Tensor& images, const MaskPattern& pattern,
                        const CameraRig& rig) const;

  /// Every trainable tensor, in a fixed order with stable names.
  ParamList parameters() const;
  ParamList encoder_parameters() const;

  Encoder& encoder() { return encoder_; }
  const Encoder& encoder() const { return encoder_; }
  DecoderPair& decoder() { return decoder_; }
  const DecoderPair& decoder() const { return decoder_; }
  Tensor& mask_token() { return mask_token_; }

 private:
  ModelConfig cfg_;
  Encoder encoder_;
  Tensor mask_token_;
  DecoderPair decoder_;
};

}  // namespace geomim
