#pragma once

#include <string>

#include "svll/image.hpp"

namespace svll {

/// Read a PNG into a float RGB image (gray/palette/alpha inputs are
/// expanded; 16-bit is reduced). Values land in [0,1].
Image read_png(const std::string& path);

/// Write 8-bit RGB. Float values are clamped to [0,1] and rounded.
void write_png(const Image& img, const std::string& path);

}  // namespace svll
