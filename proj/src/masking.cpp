#include "geomim/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "geomim/ops.hpp"

namespace geomim {

Tensor patchify(const Tensor& images, int patch) {
  if (images.rank() != 4) {
    throw ShapeError("patchify: expected (N, C, H, W), got " + shape_str(images.shape()));
  }
  const std::size_t n = images.dim(0), ch = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::size_t p = static_cast<std::size_t>(patch);
  if (patch <= 0 || h % p != 0 || w % p != 0) {
    throw ShapeError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by patch " + std::to_string(patch));
  }
  const std::size_t rows = h / p, cols = w / p, len = ch * p * p;
  std::vector<double> out(images.numel());
  auto src = images.values();
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        double* dst = out.data() + ((v * rows + r) * cols + c) * len;
        for (std::size_t k = 0; k < ch; ++k) {
          for (std::size_t y = 0; y < p; ++y) {
            const double* row = src.data() + ((v * ch + k) * h + r * p + y) * w + c * p;
            std::copy_n(row, p, dst + (k * p + y) * p);
          }
        }
      }
    }
  }
  return Tensor::from({n, rows * cols, len}, std::move(out));
}

Tensor unpatchify(const Tensor& patches, int channels, int height, int width, int patch) {
  const std::size_t p = static_cast<std::size_t>(patch);
  const std::size_t ch = channels, h = height, w = width;
  if (patches.rank() != 3 || h % p || w % p || patches.dim(1) != (h / p) * (w / p) ||
      patches.dim(2) != ch * p * p) {
    throw ShapeError("unpatchify: patches " + shape_str(patches.shape()) +
                     " do not match the requested image geometry");
  }
  const std::size_t n = patches.dim(0), rows = h / p, cols = w / p, len = ch * p * p;
  std::vector<double> out(patches.numel());
  auto src = patches.values();
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double* from = src.data() + ((v * rows + r) * cols + c) * len;
        for (std::size_t k = 0; k < ch; ++k) {
          for (std::size_t y = 0; y < p; ++y) {
            std::copy_n(from + (k * p + y) * p, p,
                        out.data() + ((v * ch + k) * h + r * p + y) * w + c * p);
          }
        }
      }
    }
  }
  return Tensor::from({n, ch, h, w}, std::move(out));
}

std::size_t MaskPattern::masked_count(int view) const {
  const auto begin = masked.begin() + static_cast<std::ptrdiff_t>(view * tokens_per_view());
  return static_cast<std::size_t>(
      std::count(begin, begin + static_cast<std::ptrdiff_t>(tokens_per_view()), 1));
}

std::vector<std::size_t> MaskPattern::visible_positions(int view) const {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < tokens_per_view(); ++p) {
    if (!is_masked(view, p)) out.push_back(p);
  }
  return out;
}

std::vector<std::size_t> MaskPattern::masked_positions(int view) const {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < tokens_per_view(); ++p) {
    if (is_masked(view, p)) out.push_back(p);
  }
  return out;
}

MaskPattern MaskPattern::none(int views, int rows, int cols) {
  MaskPattern m;
  m.views = views;
  m.rows = rows;
  m.cols = cols;
  m.masked.assign(static_cast<std::size_t>(views) * rows * cols, 0);
  return m;
}

MaskPattern sample_mask(std::uint64_t seed, int rows, int cols, int views, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("sample_mask: ratio must lie in (0, 1), got " +
                                std::to_string(ratio));
  }
  MaskPattern m = MaskPattern::none(views, rows, cols);
  m.ratio = ratio;
  const std::size_t total = m.tokens_per_view();
  const auto count = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(total)));
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(total);
  for (int v = 0; v < views; ++v) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Partial Fisher-Yates: the first `count` slots are a uniform sample.
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, total - 1);
      std::swap(order[i], order[pick(rng)]);
      m.masked[v * total + order[i]] = 1;
    }
  }
  return m;
}

Tensor select_visible(const Tensor& tokens, const MaskPattern& pattern) {
  const std::size_t per_view = pattern.tokens_per_view();
  if (tokens.rank() != 3 || tokens.dim(0) != static_cast<std::size_t>(pattern.views) ||
      tokens.dim(1) != per_view) {
    throw ShapeError("select_visible: tokens " + shape_str(tokens.shape()) +
                     " do not match a mask of " + std::to_string(pattern.views) + " views x " +
                     std::to_string(per_view) + " tokens");
  }
  const std::size_t visible = per_view - pattern.masked_count(0);
  std::vector<std::size_t> rows;
  for (int v = 0; v < pattern.views; ++v) {
    const auto pos = pattern.visible_positions(v);
    if (pos.size() != visible) {
      throw std::invalid_argument("select_visible: views have unequal visible counts");
    }
    for (auto p : pos) rows.push_back(v * per_view + p);
  }
  const std::size_t dim = tokens.dim(2);
  Tensor flat = reshape(tokens, {tokens.dim(0) * per_view, dim});
  return reshape(gather(flat, rows), {tokens.dim(0), visible, dim});
}

Tensor fill_mask(const TokenSet& encoded, const MaskPattern& pattern) {
  const Tensor& vis = encoded.visible;
  if (vis.rank() != 3 || vis.dim(0) != static_cast<std::size_t>(pattern.views) ||
      encoded.positions.size() != static_cast<std::size_t>(pattern.views)) {
    throw std::invalid_argument("fill_mask: encoded tokens " + shape_str(vis.shape()) +
                                " do not match a pattern of " + std::to_string(pattern.views) +
                                " views");
  }
  const std::size_t dim = vis.dim(2);
  if (encoded.mask_token.shape() != Shape{dim}) {
    throw ShapeError("fill_mask: mask token " + shape_str(encoded.mask_token.shape()) +
                     " does not match token width " + std::to_string(dim));
  }
  const std::size_t per_view = pattern.tokens_per_view();
  std::vector<std::size_t> visible_rows;
  std::vector<std::size_t> masked_rows;
  for (int v = 0; v < pattern.views; ++v) {
    const auto expected = pattern.visible_positions(v);
    if (encoded.positions[v] != expected || expected.size() != vis.dim(1)) {
      throw std::invalid_argument("fill_mask: positions of view " + std::to_string(v) +
                                  " disagree with the mask pattern");
    }
    for (auto p : expected) visible_rows.push_back(v * per_view + p);
    for (auto p : pattern.masked_positions(v)) masked_rows.push_back(v * per_view + p);
  }
  const std::size_t total = static_cast<std::size_t>(pattern.views) * per_view;
  Tensor full = Tensor::zeros({total, dim});
  full = scatter_add(full, visible_rows, reshape(vis, {visible_rows.size(), dim}));
  if (!masked_rows.empty()) {
    Tensor token = reshape(encoded.mask_token, {1, dim});
    Tensor copies = gather(token, std::vector<std::size_t>(masked_rows.size(), 0));
    full = scatter_add(full, masked_rows, copies);
  }
  return reshape(full, {static_cast<std::size_t>(pattern.views), per_view, dim});
}

}  // namespace geomim
