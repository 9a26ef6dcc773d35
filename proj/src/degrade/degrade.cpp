#include "starmt/degrade/degrade.hpp"

#include "starmt/core/kernels.hpp"
#include "starmt/core/parallel.hpp"
#include "starmt/data/dataset.hpp"
#include "starmt/io/png_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;
using nlohmann::json;

namespace starmt::degrade {

std::string kind_name(Kind k) {
    switch (k) {
    case Kind::Noise: return "noise";
    case Kind::Turbulence: return "turbulence";
    case Kind::Haze: return "haze";
    }
    return "unknown";
}

Kind kind_from_name(const std::string& name) {
    if (name == "noise") return Kind::Noise;
    if (name == "turbulence") return Kind::Turbulence;
    if (name == "haze") return Kind::Haze;
    throw std::invalid_argument("unknown degradation kind: " + name);
}

DegradationSpec sample_degradation_spec(Kind kind, Rng& rng, const SampleRanges& r) {
    DegradationSpec spec;
    spec.kind = kind;
    switch (kind) {
    case Kind::Noise:
        spec.params["sigma"] = rng.uniform(r.noise_sigma_min, r.noise_sigma_max);
        break;
    case Kind::Haze:
        spec.params["beta"] = rng.uniform(r.haze_beta_min, r.haze_beta_max);
        spec.params["A"] = 1.0; // internal intensity scale
        break;
    case Kind::Turbulence:
        spec.params["strength"] = rng.uniform(r.turb_strength_min, r.turb_strength_max);
        spec.params["temporal_corr"] = r.turb_temporal_corr;
        break;
    }
    spec.seed = rng.next_u64();
    return spec;
}

data::VideoSequence add_gaussian_noise(const data::VideoSequence& seq, real sigma, uint64_t seed) {
    if (sigma < 0) throw std::invalid_argument("add_gaussian_noise: sigma must be >= 0");
    data::VideoSequence out = seq;
    Rng rng(seed);
    for (long i = 0; i < out.frames.numel(); ++i) {
        const real v = out.frames[i] + sigma * rng.normal();
        out.frames[i] = std::clamp(v, static_cast<real>(0), static_cast<real>(1));
    }
    return out;
}

data::VideoSequence apply_haze(const data::VideoSequence& seq, real beta, real A) {
    if (beta < 0) throw std::invalid_argument("apply_haze: beta must be >= 0");
    if (!seq.has_depth) throw std::invalid_argument("apply_haze: sequence has no depth proxy");
    data::VideoSequence out = seq;
    const int T = seq.t_len(), H = seq.height(), W = seq.width();
    for (int t = 0; t < T; ++t) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const real tr = std::exp(-beta * seq.depth.at(t, y, x));
                const real air = A * (1.0 - tr);
                for (int c = 0; c < 3; ++c) {
                    const real v = seq.frames.at(t, y, x, c) * tr + air;
                    out.frames.at(t, y, x, c) =
                        std::clamp(v, static_cast<real>(0), static_cast<real>(1));
                }
            }
        }
    }
    return out;
}

TurbulenceFields turbulence_fields(int T, int H, int W, real strength, real temporal_corr,
                                   uint64_t seed, real spatial_sigma) {
    if (strength < 0) throw std::invalid_argument("turbulence: strength must be >= 0");
    if (temporal_corr < 0 || temporal_corr >= 1)
        throw std::invalid_argument("turbulence: temporal_corr must be in [0,1)");

    TurbulenceFields f;
    f.dx = Tensor({T, H, W});
    f.dy = Tensor({T, H, W});
    f.blur_sigma = Tensor({T, H, W});

    Rng rng(seed);
    const long plane = static_cast<long>(H) * W;
    // Circular smoothing keeps variance uniform across the plane. Separable
    // blur of unit white noise has variance (sum_i g_i^2)^2, so dividing by
    // the 1-D sum of squared taps restores unit marginal std.
    const real unit_scale = 1.0 / kernels::gaussian_kernel_sq_sum(spatial_sigma);
    const real rho = temporal_corr;
    const real innov_scale = std::sqrt(1.0 - rho * rho);

    std::vector<real> white(static_cast<size_t>(plane));
    auto smoothed_unit = [&](real* dst) {
        for (auto& v : white) v = rng.normal();
        kernels::gaussian_blur_circular(white.data(), dst, H, W, spatial_sigma);
        for (long i = 0; i < plane; ++i) dst[i] *= unit_scale;
    };

    std::vector<real> innov(static_cast<size_t>(plane));
    for (int ch = 0; ch < 3; ++ch) {
        Tensor& field = ch == 0 ? f.dx : (ch == 1 ? f.dy : f.blur_sigma);
        for (int t = 0; t < T; ++t) {
            real* cur = field.data() + static_cast<size_t>(t) * plane;
            smoothed_unit(innov.data());
            if (t == 0) {
                std::copy(innov.begin(), innov.end(), cur);
            } else {
                const real* prev = field.data() + static_cast<size_t>(t - 1) * plane;
                for (long i = 0; i < plane; ++i) cur[i] = rho * prev[i] + innov_scale * innov[i];
            }
        }
    }

    // Displacement: unit-std process scaled to `strength` px RMS per axis.
    for (long i = 0; i < f.dx.numel(); ++i) {
        f.dx[i] *= strength;
        f.dy[i] *= strength;
    }
    // Blur sigma: map the unit-std process through the normal CDF onto
    // [0, strength/2].
    for (long i = 0; i < f.blur_sigma.numel(); ++i)
        f.blur_sigma[i] = 0.5 * strength * kernels::normal_cdf(f.blur_sigma[i]);
    return f;
}

data::VideoSequence apply_turbulence(const data::VideoSequence& seq, real strength,
                                     real temporal_corr, uint64_t seed, real spatial_sigma) {
    if (strength < 0) throw std::invalid_argument("apply_turbulence: strength must be >= 0");
    if (strength == 0.0) return seq; // exact identity
    data::VideoSequence out = seq;
    const int T = seq.t_len(), H = seq.height(), W = seq.width();
    const TurbulenceFields f =
        turbulence_fields(T, H, W, strength, temporal_corr, seed, spatial_sigma);

    std::vector<real> warped(static_cast<size_t>(H) * W);
    std::vector<real> channel(static_cast<size_t>(H) * W);
    for (int t = 0; t < T; ++t) {
        const real* dxp = f.dx.data() + static_cast<size_t>(t) * H * W;
        const real* dyp = f.dy.data() + static_cast<size_t>(t) * H * W;
        const real* bsp = f.blur_sigma.data() + static_cast<size_t>(t) * H * W;
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    channel[static_cast<size_t>(y) * W + x] = seq.frames.at(t, y, x, c);
            // Warp along the displacement field, clamp-to-edge sampling.
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const long i = static_cast<long>(y) * W + x;
                    warped[static_cast<size_t>(i)] =
                        kernels::bilinear_at(channel.data(), H, W, y + dyp[i], x + dxp[i]);
                }
            }
            // Spatially varying blur with clamp-to-edge taps.
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const long i = static_cast<long>(y) * W + x;
                    const real sig = bsp[i];
                    const int radius = static_cast<int>(std::ceil(3.0 * sig));
                    real acc = 0.0;
                    if (radius == 0 || sig < 1e-6) {
                        acc = warped[static_cast<size_t>(i)];
                    } else {
                        real wsum = 0.0;
                        const real inv2s2 = 1.0 / (2.0 * sig * sig);
                        for (int ky = -radius; ky <= radius; ++ky) {
                            const int yy = std::clamp(y + ky, 0, H - 1);
                            for (int kx = -radius; kx <= radius; ++kx) {
                                const int xx = std::clamp(x + kx, 0, W - 1);
                                const real w =
                                    std::exp(-(static_cast<real>(ky) * ky + static_cast<real>(kx) * kx) * inv2s2);
                                acc += w * warped[static_cast<size_t>(yy) * W + xx];
                                wsum += w;
                            }
                        }
                        acc /= wsum;
                    }
                    out.frames.at(t, y, x, c) =
                        std::clamp(acc, static_cast<real>(0), static_cast<real>(1));
                }
            }
        }
    }
    return out;
}

data::VideoSequence apply_spec(const data::VideoSequence& seq, const DegradationSpec& spec) {
    switch (spec.kind) {
    case Kind::Noise:
        return add_gaussian_noise(seq, spec.params.at("sigma"), spec.seed);
    case Kind::Haze:
        return apply_haze(seq, spec.params.at("beta"), spec.params.at("A"));
    case Kind::Turbulence:
        return apply_turbulence(seq, spec.params.at("strength"), spec.params.at("temporal_corr"),
                                spec.seed);
    }
    throw std::invalid_argument("apply_spec: unknown kind");
}

void save_spec(const std::string& path, const DegradationSpec& spec) {
    json j;
    j["kind"] = kind_name(spec.kind);
    j["params"] = spec.params;
    j["seed"] = spec.seed;
    std::ofstream os(path);
    os << j.dump(2) << "\n";
    if (!os) throw std::runtime_error("save_spec: failed writing " + path);
}

DegradationSpec load_spec(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_spec: missing " + path);
    json j = json::parse(is);
    DegradationSpec spec;
    spec.kind = kind_from_name(j.at("kind").get<std::string>());
    spec.params = j.at("params").get<std::map<std::string, real>>();
    spec.seed = j.at("seed").get<uint64_t>();
    return spec;
}

data::DatasetManifest degrade_dataset(const data::DatasetManifest& manifest, Kind kind,
                                      uint64_t seed, const std::string& out_root,
                                      const DegradeOptions& opt) {
    if (fs::exists(fs::path(out_root) / "manifest.json")) {
        if (!opt.force)
            throw std::runtime_error("degrade_dataset: target exists at " + out_root +
                                     " (use force to overwrite)");
        fs::remove_all(out_root);
    }

    data::DatasetManifest out = manifest;
    out.root = out_root;

    // Stable over splits in manifest order; sequence index is global so the
    // per-sequence seed does not depend on split boundaries.
    struct Item {
        std::string split;
        std::string id;
        uint64_t index;
    };
    std::vector<Item> items;
    uint64_t idx = 0;
    for (const auto& [split, ids] : manifest.splits)
        for (const auto& id : ids) items.push_back({split, id, idx++});

    parallel_for(static_cast<long>(items.size()), [&](long i) {
        const Item& it = items[static_cast<size_t>(i)];
        Rng rng(derive_seed(seed, it.index));
        const DegradationSpec spec = sample_degradation_spec(kind, rng, opt.ranges);

        data::VideoSequence seq = data::load_sequence(manifest.root, it.split, it.id);
        data::VideoSequence degraded = apply_spec(seq, spec);
        degraded.id = it.id;
        degraded.labels.clear(); // label files are copied verbatim below

        const fs::path src_dir = data::sequence_dir(manifest.root, it.split, it.id);
        const fs::path dst_dir = data::sequence_dir(out_root, it.split, it.id);
        fs::create_directories(dst_dir / "frames");

        const int T = degraded.t_len(), H = degraded.height(), W = degraded.width();
        for (int t = 0; t < T; ++t) {
            Tensor img({H, W, 3});
            const real* srcp = degraded.frames.data() + static_cast<size_t>(t) * H * W * 3;
            std::copy(srcp, srcp + static_cast<size_t>(H) * W * 3, img.data());
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%04d.png", t);
            io::write_png_rgb((dst_dir / "frames" / buf).string(), img);
        }
        // Depth and labels carry over unchanged, byte-for-byte.
        if (fs::exists(src_dir / "depth.npy"))
            fs::copy_file(src_dir / "depth.npy", dst_dir / "depth.npy");
        if (fs::exists(src_dir / "labels.json"))
            fs::copy_file(src_dir / "labels.json", dst_dir / "labels.json");
        save_spec((dst_dir / "degradation.json").string(), spec);
    });

    data::save_manifest(out);
    return out;
}

} // namespace starmt::degrade
