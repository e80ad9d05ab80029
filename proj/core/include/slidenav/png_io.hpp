#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slidenav/image.hpp"

namespace slidenav {

/// 8-bit RGB or grayscale PNG.
void write_png_u8(const std::string& path, const ImageU8& img);
ImageU8 read_png_u8(const std::string& path);

/// 16-bit grayscale PNG; values are raw 16-bit samples (0..65535).
void write_png_gray16(const std::string& path, int width, int height,
                      const std::vector<std::uint16_t>& samples);
void read_png_gray16(const std::string& path, int& width, int& height,
                     std::vector<std::uint16_t>& samples);

}  // namespace slidenav
