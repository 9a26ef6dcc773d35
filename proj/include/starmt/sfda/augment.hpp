#pragma once

#include "starmt/core/rng.hpp"
#include "starmt/data/types.hpp"

#include <array>
#include <utility>
#include <vector>

namespace starmt::sfda {

struct AugmentConfig {
    real flip_prob = 0.5;
    real perspective_frac = 0.05; // corner jitter as a fraction of frame size
    real weak_chroma = 0.10;      // +-10% multipliers
    real strong_chroma = 0.40;    // +-40% multipliers
    real erase_area_min = 0.02;
    real erase_area_max = 0.15;
};

struct ChromaticParams {
    real brightness = 1.0;
    real contrast = 1.0;
    real saturation = 1.0;
    bool identity() const { return brightness == 1.0 && contrast == 1.0 && saturation == 1.0; }
};

// Output-to-input homography (row major 3x3) plus its inverse; identity when
// no flip and zero corner jitter.
struct GeometricTransform {
    bool is_identity = true;
    std::array<real, 9> out_to_in{1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::array<real, 9> in_to_out{1, 0, 0, 0, 1, 0, 0, 0, 1};
};

struct EraseParams {
    bool active = false;
    int x = 0, y = 0, w = 0, h = 0;
    Tensor noise; // [h, w, 3], reused on every frame
};

struct AugmentRecord {
    GeometricTransform geom;
    ChromaticParams weak;
    ChromaticParams strong;
    EraseParams erase;
};

// Shared geometric transform (flip + perspective) applied identically to
// both outputs; chromatic jitter mild on weak and aggressive on strong;
// random erasing on strong only. All parameters are drawn once per sequence
// and applied to every frame.
std::pair<data::VideoSequence, data::VideoSequence> augment_pair(const data::VideoSequence& seq,
                                                                 const AugmentConfig& cfg, Rng& rng,
                                                                 AugmentRecord* record = nullptr);

// Warp every frame through an output-to-input homography (bilinear,
// clamp-to-edge). Exposed for inverse-consistency checks.
Tensor warp_frames(const Tensor& frames, const std::array<real, 9>& out_to_in);

// Retained frame indices (sorted) after masking floor(r*T/100) of them
// uniformly at random; at least one frame is always retained.
std::vector<int> mask_frames(int t_len, real r_percent, Rng& rng);

} // namespace starmt::sfda
