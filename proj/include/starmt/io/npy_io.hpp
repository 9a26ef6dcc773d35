#pragma once

#include "starmt/core/tensor.hpp"

#include <string>
#include <vector>

namespace starmt::io {

// NPY v1.0, little-endian float32, C order. The in-memory tensor is double;
// values are truncated to float32 at the file boundary.
void write_npy_f32(const std::string& path, const Tensor& t);
Tensor read_npy_f32(const std::string& path);

} // namespace starmt::io
