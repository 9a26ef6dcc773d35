#pragma once

#include "starmt/core/rng.hpp"
#include "starmt/data/types.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace starmt::degrade {

enum class Kind { Noise, Turbulence, Haze };

std::string kind_name(Kind k);
Kind kind_from_name(const std::string& name);

struct DegradationSpec {
    Kind kind = Kind::Noise;
    std::map<std::string, real> params; // noise: sigma; turbulence: strength,
                                        // temporal_corr; haze: beta, A
    uint64_t seed = 0;
};

// Sampling ranges for per-sequence severities. Noise and haze ranges are
// fixed benchmark conventions; the turbulence range is ours.
struct SampleRanges {
    real noise_sigma_min = 10.0 / 255.0;
    real noise_sigma_max = 50.0 / 255.0;
    real haze_beta_min = 0.5;
    real haze_beta_max = 1.5;
    real turb_strength_min = 1.0;
    real turb_strength_max = 3.0;
    real turb_temporal_corr = 0.9;
};

DegradationSpec sample_degradation_spec(Kind kind, Rng& rng, const SampleRanges& ranges = {});

// out = clip(in + N(0, sigma^2), 0, 1), iid per pixel/channel/frame.
data::VideoSequence add_gaussian_noise(const data::VideoSequence& seq, real sigma, uint64_t seed);

// out = I * exp(-beta*d) + A * (1 - exp(-beta*d)). Requires the depth proxy.
data::VideoSequence apply_haze(const data::VideoSequence& seq, real beta, real A);

// Smoothed-noise displacement warp with AR(1) temporal evolution plus a
// spatially varying Gaussian blur whose sigma field follows the same process.
data::VideoSequence apply_turbulence(const data::VideoSequence& seq, real strength,
                                     real temporal_corr, uint64_t seed, real spatial_sigma = 6.0);

data::VideoSequence apply_spec(const data::VideoSequence& seq, const DegradationSpec& spec);

// Raw turbulence fields for statistical tests: dx, dy, blur_sigma are each
// [T,H,W]. dx/dy have marginal std = strength; blur_sigma lies in
// [0, strength/2].
struct TurbulenceFields {
    Tensor dx;
    Tensor dy;
    Tensor blur_sigma;
};
TurbulenceFields turbulence_fields(int T, int H, int W, real strength, real temporal_corr,
                                   uint64_t seed, real spatial_sigma = 6.0);

struct DegradeOptions {
    bool force = false;
    SampleRanges ranges;
};

// Degrades every split of a dataset into a new root with identical labels
// (label files are copied byte-for-byte) and per-sequence specs persisted
// for audit. Per-sequence seeds derive from (seed, global sequence index).
data::DatasetManifest degrade_dataset(const data::DatasetManifest& manifest, Kind kind,
                                      uint64_t seed, const std::string& out_root,
                                      const DegradeOptions& opt = {});

void save_spec(const std::string& path, const DegradationSpec& spec);
DegradationSpec load_spec(const std::string& path);

} // namespace starmt::degrade
