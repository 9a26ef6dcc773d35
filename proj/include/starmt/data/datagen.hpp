#pragma once

#include "starmt/data/types.hpp"
#include "starmt/core/rng.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace starmt::data {

// Synthetic video generator: textured shapes on a smooth procedural
// background, drifting linearly with per-frame jitter, constant per-object
// depth over a smooth far-background depth field.
struct GenConfig {
    int T = 8;
    int H = 96;
    int W = 96;
    int n_c = 4;
    int grid_stride = 8;

    int min_objects = 1;
    int max_objects = 3;
    real min_size = 18.0; // object diameter, px
    real max_size = 36.0;
    real max_speed = 2.5;    // |velocity| per axis, px/frame
    real jitter_sigma = 0.3; // motion jitter, px

    real object_depth_min = 0.2;
    real object_depth_max = 0.8;
    real background_depth_min = 0.85;
    real background_depth_max = 1.0;

    real visibility_min = 0.5; // labeled when >= this fraction of pixels is in frame

    void validate() const;
};

// One object's sampled appearance and motion, exposed so tests can
// re-simulate trajectories independently of the renderer.
struct ObjectTrack {
    int track_id = 0;
    int class_id = 0;
    real size = 0;        // nominal diameter, px
    real depth = 0;       // constant layer depth
    real x0 = 0, y0 = 0;  // center at frame 0
    real vx = 0, vy = 0;  // linear drift per frame
    real angle = 0;       // orientation, radians
    std::array<real, 3> color{};
    real stripe_period = 0; // texture stripe width, px
    std::vector<real> jitter_x; // per-frame jitter, length T
    std::vector<real> jitter_y;

    real center_x(int t) const { return x0 + vx * t + jitter_x[static_cast<size_t>(t)]; }
    real center_y(int t) const { return y0 + vy * t + jitter_y[static_cast<size_t>(t)]; }
};

// Samples the object set for (config, seed). Pure; consumes only the object
// stream of the seed, never the background stream.
std::vector<ObjectTrack> sample_tracks(const GenConfig& cfg, uint64_t seed);

VideoSequence generate_sequence(const GenConfig& cfg, uint64_t seed);

// Background-only render of the same (config, seed); used by soundness checks.
VideoSequence generate_background_only(const GenConfig& cfg, uint64_t seed);

struct BuildOptions {
    int n_sequences = 80;
    std::array<real, 3> split_ratios{0.75, 0.0, 0.25}; // train/val/test, sums to 1
    bool force = false;
};

// Generates and persists a dataset at root. Per-sequence seeds are
// derive_seed(master_seed, sequence_index).
DatasetManifest build_dataset(const GenConfig& cfg, const BuildOptions& opt,
                              const std::string& root, uint64_t master_seed);

} // namespace starmt::data
