#pragma once

#include <filesystem>
#include <span>

namespace geomim {

/// Writes an 8-bit grayscale PNG of a row-major height x width plane,
/// min-max normalized to [0, 255]. A constant plane renders black.
void write_gray_png(const std::filesystem::path& path, int height, int width,
                    std::span<const double> plane);

}  // namespace geomim
