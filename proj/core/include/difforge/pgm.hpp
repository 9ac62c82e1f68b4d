#pragma once

#include <filesystem>

#include "difforge/class_mask.hpp"
#include "difforge/grid.hpp"

namespace difforge::pgm {

/// 8-bit binary PGM (P5), one label per pixel.
void write_mask(const std::filesystem::path& path, const ClassMask& mask);
ClassMask read_mask(const std::filesystem::path& path);

/// 16-bit binary PGM storing HU + 1000 (0..2000, big-endian samples as the
/// format requires). `hu` is an (H,W) grid; values are clipped and rounded.
void write_hu(const std::filesystem::path& path, const Grid& hu);
Grid read_hu(const std::filesystem::path& path);

/// 8-bit preview of a [-1,1] image, linearly stretched to 0..255.
void write_preview(const std::filesystem::path& path, const Grid& normalized);

}  // namespace difforge::pgm
