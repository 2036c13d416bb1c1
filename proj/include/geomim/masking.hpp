#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "geomim/tensor.hpp"

namespace geomim {

/// (N, 3, H, W) -> (N, h*w, 3*patch*patch). Patches in row-major order; each
/// vector is channel-major then row-major inside the patch.
Tensor patchify(const Tensor& images, int patch);
Tensor unpatchify(const Tensor& patches, int channels, int height, int width, int patch);

/// Per-view boolean grid, true = masked.
struct MaskPattern {
  int views = 0;
  int rows = 0;
  int cols = 0;
  double ratio = 0.0;
  std::vector<unsigned char> masked;  // N * rows * cols

  std::size_t tokens_per_view() const { return static_cast<std::size_t>(rows) * cols; }
  bool is_masked(int view, std::size_t pos) const {
    return masked[view * tokens_per_view() + pos] != 0;
  }
  std::size_t masked_count(int view) const;
  /// Ascending unmasked positions of one view.
  std::vector<std::size_t> visible_positions(int view) const;
  std::vector<std::size_t> masked_positions(int view) const;

  /// Pattern with nothing masked.
  static MaskPattern none(int views, int rows, int cols);
};

/// Exactly round(ratio * rows * cols) masked positions per view, sampled
/// uniformly without replacement and independently per view.
MaskPattern sample_mask(std::uint64_t seed, int rows, int cols, int views, double ratio);

/// Encoder output over visible tokens.
struct TokenSet {
  Tensor visible;                                // N x L_vis x C
  std::vector<std::vector<std::size_t>> positions;  // per view, strictly increasing
  Tensor mask_token;                             // C
};

/// Gathers the visible rows of (N, rows*cols, D) token data into (N, L_vis, D).
Tensor select_visible(const Tensor& tokens, const MaskPattern& pattern);

/// Restores the full (N, rows*cols, C) grid: visible slots take the encoder
/// output, masked slots the shared mask token.
Tensor fill_mask(const TokenSet& encoded, const MaskPattern& pattern);

}  // namespace geomim
