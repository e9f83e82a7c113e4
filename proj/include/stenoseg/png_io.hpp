#pragma once

#include <filesystem>

#include "stenoseg/augmentation.hpp"

namespace stenoseg::png_io {

// Reads an 8-bit PNG as grayscale (1 channel) or RGB (3 channels). Palette
// images expand to RGB, 16-bit depths reduce to 8, alpha is stripped.
augmentation::RasterImage read_png(const std::filesystem::path& path);

void write_png(const augmentation::RasterImage& image, const std::filesystem::path& path);

}  // namespace stenoseg::png_io
