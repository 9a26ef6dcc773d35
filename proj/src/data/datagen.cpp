#include "starmt/data/datagen.hpp"

#include "starmt/core/parallel.hpp"
#include "starmt/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace fs = std::filesystem;

namespace starmt::data {

namespace {

constexpr real kPi = 3.14159265358979323846;

// Seed stream ids: background and objects draw from independent streams so a
// background-only render of the same seed is bit-identical.
constexpr uint64_t kBackgroundStream = 0;
constexpr uint64_t kObjectStream = 1;

std::array<real, 3> hsv_to_rgb(real h, real s, real v) {
    const real c = v * s;
    const real hp = std::fmod(h, 1.0) * 6.0;
    const real x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    real r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c; g = x;
    } else if (hp < 2) {
        r = x; g = c;
    } else if (hp < 3) {
        g = c; b = x;
    } else if (hp < 4) {
        g = x; b = c;
    } else if (hp < 5) {
        r = x; b = c;
    } else {
        r = c; b = x;
    }
    const real m = v - c;
    return {r + m, g + m, b + m};
}

struct BgField {
    // Smooth sum of low-frequency sinusoids per channel plus a depth field.
    struct Wave {
        real fx, fy, phase, amp;
    };
    std::array<std::vector<Wave>, 3> color_waves;
    std::array<real, 3> base{};
    std::vector<Wave> depth_waves;

    static BgField sample(const GenConfig& cfg, Rng& rng) {
        BgField f;
        for (int c = 0; c < 3; ++c) {
            f.base[c] = rng.uniform(0.35, 0.6);
            for (int k = 0; k < 3; ++k) {
                Wave w;
                const real freq = rng.uniform(0.5, 2.0);
                const real dir = rng.uniform(0.0, 2.0 * kPi);
                w.fx = freq * std::cos(dir) * 2.0 * kPi / cfg.W;
                w.fy = freq * std::sin(dir) * 2.0 * kPi / cfg.H;
                w.phase = rng.uniform(0.0, 2.0 * kPi);
                w.amp = rng.uniform(0.02, 0.07);
                f.color_waves[c].push_back(w);
            }
        }
        for (int k = 0; k < 2; ++k) {
            Wave w;
            const real freq = rng.uniform(0.5, 1.5);
            const real dir = rng.uniform(0.0, 2.0 * kPi);
            w.fx = freq * std::cos(dir) * 2.0 * kPi / cfg.W;
            w.fy = freq * std::sin(dir) * 2.0 * kPi / cfg.H;
            w.phase = rng.uniform(0.0, 2.0 * kPi);
            w.amp = 1.0;
            f.depth_waves.push_back(w);
        }
        return f;
    }

    real color_at(int c, real x, real y) const {
        real v = base[static_cast<size_t>(c)];
        for (const auto& w : color_waves[static_cast<size_t>(c)])
            v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
        return std::clamp(v, static_cast<real>(0.05), static_cast<real>(0.95));
    }

    real depth_at(const GenConfig& cfg, real x, real y) const {
        real v = 0.0;
        for (const auto& w : depth_waves) v += std::sin(w.fx * x + w.fy * y + w.phase);
        const real u = 0.5 + v / (2.0 * static_cast<real>(depth_waves.size())); // [0,1]
        return cfg.background_depth_min +
               (cfg.background_depth_max - cfg.background_depth_min) *
                   std::clamp(u, static_cast<real>(0), static_cast<real>(1));
    }
};

// Point-in-shape test in object-local coordinates (u right, v down, already
// rotated by -angle). Shapes are normalized to comparable areas.
bool inside_shape(int shape_kind, real u, real v, real radius) {
    switch (shape_kind) {
    case 0: // disk
        return u * u + v * v <= radius * radius;
    case 1: { // square
        const real h = radius * 0.886; // matches disk area
        return std::abs(u) <= h && std::abs(v) <= h;
    }
    case 2: { // upward triangle
        const real s = radius * 1.78;
        const real top = -radius * 1.05;
        const real bot = radius * 0.72;
        if (v < top || v > bot) return false;
        const real frac = (v - top) / (bot - top);
        return std::abs(u) <= 0.5 * s * frac;
    }
    default: { // diamond
        const real h = radius * 1.25;
        return std::abs(u) + std::abs(v) <= h;
    }
    }
}

struct ObjectStamp {
    // In-frame footprint of one object at one frame, before occlusion.
    std::vector<std::pair<int, int>> pixels; // (y, x)
    long total_pixels = 0;                   // footprint size including out-of-frame
    Box bbox;                                // over in-frame pixels
    bool any = false;
};

ObjectStamp stamp_object(const GenConfig& cfg, const ObjectTrack& obj, int t) {
    ObjectStamp st;
    const real cx = obj.center_x(t);
    const real cy = obj.center_y(t);
    const real r = obj.size * 0.5;
    const real reach = r * 1.9; // covers the largest shape extent
    const int x_lo = static_cast<int>(std::floor(cx - reach));
    const int x_hi = static_cast<int>(std::ceil(cx + reach));
    const int y_lo = static_cast<int>(std::floor(cy - reach));
    const int y_hi = static_cast<int>(std::ceil(cy + reach));
    const real ca = std::cos(obj.angle), sa = std::sin(obj.angle);

    real bx1 = 1e30, by1 = 1e30, bx2 = -1e30, by2 = -1e30;
    for (int y = y_lo; y <= y_hi; ++y) {
        for (int x = x_lo; x <= x_hi; ++x) {
            const real dx = (x + 0.5) - cx;
            const real dy = (y + 0.5) - cy;
            const real u = ca * dx + sa * dy;
            const real v = -sa * dx + ca * dy;
            if (!inside_shape(obj.class_id % 4, u, v, r)) continue;
            ++st.total_pixels;
            if (x < 0 || x >= cfg.W || y < 0 || y >= cfg.H) continue;
            st.pixels.emplace_back(y, x);
            bx1 = std::min(bx1, static_cast<real>(x));
            by1 = std::min(by1, static_cast<real>(y));
            bx2 = std::max(bx2, static_cast<real>(x + 1));
            by2 = std::max(by2, static_cast<real>(y + 1));
        }
    }
    if (!st.pixels.empty()) {
        st.any = true;
        st.bbox = Box{bx1, by1, bx2, by2};
    }
    return st;
}

std::array<real, 3> object_color_at(const ObjectTrack& obj, real u) {
    // Two-tone stripes along the object-local u axis.
    const long band = static_cast<long>(std::floor(u / obj.stripe_period));
    const bool alt = (band % 2 + 2) % 2 == 1;
    if (!alt) return obj.color;
    return {obj.color[0] * 0.45, obj.color[1] * 0.45, obj.color[2] * 0.45};
}

} // namespace

void GenConfig::validate() const {
    if (T < 1) throw std::invalid_argument("GenConfig: T must be >= 1");
    if (grid_stride < 1) throw std::invalid_argument("GenConfig: grid_stride must be >= 1");
    if (H % grid_stride != 0 || W % grid_stride != 0)
        throw std::invalid_argument("GenConfig: H and W must be divisible by the grid stride");
    if (n_c < 2) throw std::invalid_argument("GenConfig: n_c must be >= 2");
    if (min_objects < 0 || max_objects < min_objects)
        throw std::invalid_argument("GenConfig: bad object count range");
    if (min_size <= 1.0 || max_size < min_size)
        throw std::invalid_argument("GenConfig: bad size range");
}

std::vector<ObjectTrack> sample_tracks(const GenConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, kObjectStream));
    const int count = cfg.max_objects == 0
                          ? 0
                          : rng.uniform_int(cfg.min_objects, cfg.max_objects);
    std::vector<ObjectTrack> tracks;
    tracks.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        ObjectTrack o;
        o.track_id = i;
        o.class_id = rng.uniform_int(0, cfg.n_c - 1);
        o.size = rng.uniform(cfg.min_size, cfg.max_size);
        o.depth = rng.uniform(cfg.object_depth_min, cfg.object_depth_max);
        o.x0 = rng.uniform(0.12 * cfg.W, 0.88 * cfg.W);
        o.y0 = rng.uniform(0.12 * cfg.H, 0.88 * cfg.H);
        o.vx = rng.uniform(-cfg.max_speed, cfg.max_speed);
        o.vy = rng.uniform(-cfg.max_speed, cfg.max_speed);
        o.angle = rng.uniform(0.0, 2.0 * kPi);
        const real hue = (o.class_id + 0.15) / cfg.n_c;
        const real val = rng.uniform(0.75, 0.95);
        o.color = hsv_to_rgb(hue, 0.85, val);
        o.stripe_period = rng.uniform(3.0, 6.0);
        o.jitter_x.resize(static_cast<size_t>(cfg.T));
        o.jitter_y.resize(static_cast<size_t>(cfg.T));
        for (int t = 0; t < cfg.T; ++t) {
            o.jitter_x[static_cast<size_t>(t)] = rng.normal(0.0, cfg.jitter_sigma);
            o.jitter_y[static_cast<size_t>(t)] = rng.normal(0.0, cfg.jitter_sigma);
        }
        tracks.push_back(std::move(o));
    }
    return tracks;
}

namespace {

VideoSequence render(const GenConfig& cfg, uint64_t seed, bool with_objects) {
    cfg.validate();
    Rng bg_rng(derive_seed(seed, kBackgroundStream));
    const BgField bg = BgField::sample(cfg, bg_rng);

    VideoSequence seq;
    seq.frames = Tensor({cfg.T, cfg.H, cfg.W, 3});
    seq.depth = Tensor({cfg.T, cfg.H, cfg.W});
    seq.has_depth = true;
    seq.has_labels = true;

    // Static background, computed once.
    Tensor bg_rgb({cfg.H, cfg.W, 3});
    Tensor bg_d({cfg.H, cfg.W});
    for (int y = 0; y < cfg.H; ++y) {
        for (int x = 0; x < cfg.W; ++x) {
            for (int c = 0; c < 3; ++c) bg_rgb.at(y, x, c) = bg.color_at(c, x + 0.5, y + 0.5);
            bg_d.at(y, x) = bg.depth_at(cfg, x + 0.5, y + 0.5);
        }
    }

    const std::vector<ObjectTrack> tracks =
        with_objects ? sample_tracks(cfg, seed) : std::vector<ObjectTrack>{};

    for (int t = 0; t < cfg.T; ++t) {
        real* fr = seq.frames.data() + static_cast<size_t>(t) * cfg.H * cfg.W * 3;
        real* dp = seq.depth.data() + static_cast<size_t>(t) * cfg.H * cfg.W;
        std::copy(bg_rgb.data(), bg_rgb.data() + bg_rgb.numel(), fr);
        std::copy(bg_d.data(), bg_d.data() + bg_d.numel(), dp);

        // Far-to-near painter order; nearer (smaller depth) objects overwrite.
        std::vector<int> order(tracks.size());
        for (size_t i = 0; i < order.size(); ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (tracks[static_cast<size_t>(a)].depth != tracks[static_cast<size_t>(b)].depth)
                return tracks[static_cast<size_t>(a)].depth > tracks[static_cast<size_t>(b)].depth;
            return a < b;
        });

        for (int oi : order) {
            const ObjectTrack& obj = tracks[static_cast<size_t>(oi)];
            const ObjectStamp st = stamp_object(cfg, obj, t);
            if (st.total_pixels == 0) continue;
            const real ca = std::cos(obj.angle), sa = std::sin(obj.angle);
            const real cx = obj.center_x(t), cy = obj.center_y(t);
            for (const auto& [y, x] : st.pixels) {
                const real dx = (x + 0.5) - cx;
                const real dy = (y + 0.5) - cy;
                const real u = ca * dx + sa * dy;
                const auto col = object_color_at(obj, u);
                real* px = fr + (static_cast<size_t>(y) * cfg.W + x) * 3;
                px[0] = col[0];
                px[1] = col[1];
                px[2] = col[2];
                dp[static_cast<size_t>(y) * cfg.W + x] = obj.depth;
            }
            const real visible =
                static_cast<real>(st.pixels.size()) / static_cast<real>(st.total_pixels);
            if (st.any && visible >= cfg.visibility_min) {
                BoxLabel l;
                l.frame = t;
                l.class_id = obj.class_id;
                l.box = st.bbox;
                l.track_id = obj.track_id;
                seq.labels.push_back(l);
            }
        }
    }
    seq.validate(cfg.grid_stride);
    return seq;
}

} // namespace

VideoSequence generate_sequence(const GenConfig& cfg, uint64_t seed) {
    return render(cfg, seed, true);
}

VideoSequence generate_background_only(const GenConfig& cfg, uint64_t seed) {
    return render(cfg, seed, false);
}

DatasetManifest build_dataset(const GenConfig& cfg, const BuildOptions& opt,
                              const std::string& root, uint64_t master_seed) {
    cfg.validate();
    if (opt.n_sequences < 1) throw std::invalid_argument("build_dataset: n_sequences must be >= 1");
    const real ratio_sum = opt.split_ratios[0] + opt.split_ratios[1] + opt.split_ratios[2];
    if (std::abs(ratio_sum - 1.0) > 1e-9)
        throw std::invalid_argument("build_dataset: split ratios must sum to 1");

    const fs::path manifest_path = fs::path(root) / "manifest.json";
    if (fs::exists(manifest_path)) {
        if (!opt.force)
            throw std::runtime_error("build_dataset: manifest exists at " + root +
                                     " (use force to overwrite)");
        fs::remove_all(root);
    }

    const int n = opt.n_sequences;
    int n_train = static_cast<int>(std::floor(opt.split_ratios[0] * n + 1e-9));
    int n_val = static_cast<int>(std::floor(opt.split_ratios[1] * n + 1e-9));
    int n_test = n - n_train - n_val;
    if (n_test < 0) {
        n_val += n_test;
        n_test = 0;
    }

    std::vector<std::string> ids(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "seq_%04d", i);
        ids[static_cast<size_t>(i)] = buf;
    }

    DatasetManifest m;
    m.root = root;
    m.seed = master_seed;
    m.n_c = cfg.n_c;
    m.splits["train"] = {ids.begin(), ids.begin() + n_train};
    m.splits["val"] = {ids.begin() + n_train, ids.begin() + n_train + n_val};
    m.splits["test"] = {ids.begin() + n_train + n_val, ids.end()};

    auto split_of = [&](int i) -> const char* {
        if (i < n_train) return "train";
        if (i < n_train + n_val) return "val";
        return "test";
    };

    parallel_for(n, [&](long i) {
        VideoSequence seq = generate_sequence(cfg, derive_seed(master_seed, static_cast<uint64_t>(i)));
        seq.id = ids[static_cast<size_t>(i)];
        save_sequence(root, split_of(static_cast<int>(i)), seq);
    });

    save_manifest(m);
    return m;
}

} // namespace starmt::data
