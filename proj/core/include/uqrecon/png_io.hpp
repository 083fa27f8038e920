#pragma once

#include <filesystem>

#include "uqrecon/image.hpp"

namespace uqr {

// 8-bit PNG. Values are clamped to [0,1] and rounded to the nearest level.
// Single-channel images are written as grayscale, 3-channel as RGB.
void write_png(const std::filesystem::path& path, const Image& image);

// Decodes any PNG libpng understands into a 3-channel [0,1] image
// (gray is expanded, alpha is dropped, 16-bit is reduced to 8).
Image read_png_rgb(const std::filesystem::path& path);

}  // namespace uqr
