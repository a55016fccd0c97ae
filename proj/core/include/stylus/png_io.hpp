#pragma once

#include <string>

#include "stylus/image.hpp"

namespace stylus {

// 8-bit PNG. Greyscale files load as 1 channel, everything else as RGB
// (alpha is composited over white).
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

}  // namespace stylus
