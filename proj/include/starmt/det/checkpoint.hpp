#pragma once

#include "starmt/det/model.hpp"

#include <map>
#include <string>

namespace starmt::det {

// Single-file checkpoint: a small archive holding a manifest.json (tensor
// names, shapes, scopes, dtype, offsets, architecture fingerprint, training
// metadata, crc32 of the buffer region) followed by raw little-endian
// float32 buffers in manifest order.
void save_checkpoint(const ModelParams& params, const std::string& path,
                     const std::map<std::string, std::string>& metadata = {});

ModelParams load_checkpoint(const std::string& path);

} // namespace starmt::det
