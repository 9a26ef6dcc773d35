#pragma once

#include "starmt/core/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace starmt::data {

struct Box {
    real x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    real width() const { return x2 - x1; }
    real height() const { return y2 - y1; }
    real area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
    real cx() const { return 0.5 * (x1 + x2); }
    real cy() const { return 0.5 * (y1 + y2); }
    bool well_formed() const { return x2 > x1 && y2 > y1; }
};

struct BoxLabel {
    int frame = 0;
    int class_id = 0;
    Box box;
    int track_id = 0;
};

// An ordered stack of frames with a per-frame depth proxy and box labels.
// Frames: [T,H,W,3] intensities in [0,1]; depth: [T,H,W] in (0,1].
struct VideoSequence {
    std::string id;
    Tensor frames;
    Tensor depth;
    std::vector<BoxLabel> labels;
    bool has_depth = false;
    bool has_labels = false;

    int t_len() const { return frames.dim(0); }
    int height() const { return frames.dim(1); }
    int width() const { return frames.dim(2); }

    void validate(int grid_stride) const;
};

struct DatasetManifest {
    std::string root;
    std::map<std::string, std::vector<std::string>> splits; // split -> sequence ids
    uint64_t seed = 0;
    int n_c = 0;

    const std::vector<std::string>& split_ids(const std::string& split) const;
};

} // namespace starmt::data
