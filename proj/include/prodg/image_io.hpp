#pragma once

#include "prodg/backends.hpp"

#include <filesystem>

namespace prodg {

// Binary netpbm: P6 for 3-channel, P5 for 1-channel, 8 bits per sample.
// Pixel values map linearly: [0, 1] -> [0, 255], clamped and rounded.

void write_netpbm(const std::filesystem::path& path, const Image& image);
Image read_netpbm(const std::filesystem::path& path);

/// Writes a [0, 1] heatmap as an 8-bit P5 image.
void write_heatmap(const std::filesystem::path& path, const Matrix& heatmap);

}  // namespace prodg
