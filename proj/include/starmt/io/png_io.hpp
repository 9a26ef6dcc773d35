#pragma once

#include "starmt/core/tensor.hpp"

#include <string>

namespace starmt::io {

// Writes an 8-bit RGB PNG. img: [H,W,3] with intensities in [0,1];
// values are rounded to the nearest of 256 levels at the boundary.
void write_png_rgb(const std::string& path, const Tensor& img);

// Reads a PNG as [H,W,3] in [0,1]. Grayscale/palette/alpha inputs are
// expanded to RGB so externally prepared data loads verbatim.
Tensor read_png_rgb(const std::string& path);

} // namespace starmt::io
