#include "starmt/sfda/augment.hpp"

#include "starmt/core/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace starmt::sfda {

namespace {

// Solves the 8-unknown homography mapping src quad -> dst quad via Gaussian
// elimination with partial pivoting.
std::array<real, 9> homography_from_quads(const std::array<std::pair<real, real>, 4>& src,
                                          const std::array<std::pair<real, real>, 4>& dst) {
    real a[8][9] = {};
    for (int i = 0; i < 4; ++i) {
        const real x = src[static_cast<size_t>(i)].first, y = src[static_cast<size_t>(i)].second;
        const real u = dst[static_cast<size_t>(i)].first, v = dst[static_cast<size_t>(i)].second;
        real* r0 = a[2 * i];
        real* r1 = a[2 * i + 1];
        r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y; r0[8] = u;
        r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y; r1[8] = v;
    }
    for (int col = 0; col < 8; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 8; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        if (std::abs(a[pivot][col]) < 1e-12)
            throw std::runtime_error("homography_from_quads: degenerate quad");
        std::swap_ranges(a[col], a[col] + 9, a[pivot]);
        for (int r = 0; r < 8; ++r) {
            if (r == col) continue;
            const real f = a[r][col] / a[col][col];
            for (int c = col; c < 9; ++c) a[r][c] -= f * a[col][c];
        }
    }
    std::array<real, 9> h{};
    for (int i = 0; i < 8; ++i) h[static_cast<size_t>(i)] = a[i][8] / a[i][i];
    h[8] = 1.0;
    return h;
}

std::array<real, 9> invert_homography(const std::array<real, 9>& h) {
    const real a = h[0], b = h[1], c = h[2], d = h[3], e = h[4], f = h[5], g = h[6], i = h[7],
               j = h[8];
    const real det = a * (e * j - f * i) - b * (d * j - f * g) + c * (d * i - e * g);
    if (std::abs(det) < 1e-15) throw std::runtime_error("invert_homography: singular");
    std::array<real, 9> inv{
        (e * j - f * i), -(b * j - c * i), (b * f - c * e),
        -(d * j - f * g), (a * j - c * g), -(a * f - c * d),
        (d * i - e * g), -(a * i - b * g), (a * e - b * d)};
    for (auto& v : inv) v /= det;
    return inv;
}

void apply_chroma_inplace(Tensor& frames, const ChromaticParams& p) {
    if (p.identity()) return;
    const int T = frames.dim(0), H = frames.dim(1), W = frames.dim(2);
    for (int t = 0; t < T; ++t) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                real r = frames.at(t, y, x, 0);
                real g = frames.at(t, y, x, 1);
                real b = frames.at(t, y, x, 2);
                const real gray = 0.299 * r + 0.587 * g + 0.114 * b;
                r = gray + (r - gray) * p.saturation;
                g = gray + (g - gray) * p.saturation;
                b = gray + (b - gray) * p.saturation;
                r = 0.5 + (r - 0.5) * p.contrast;
                g = 0.5 + (g - 0.5) * p.contrast;
                b = 0.5 + (b - 0.5) * p.contrast;
                frames.at(t, y, x, 0) = std::clamp(r * p.brightness, static_cast<real>(0), static_cast<real>(1));
                frames.at(t, y, x, 1) = std::clamp(g * p.brightness, static_cast<real>(0), static_cast<real>(1));
                frames.at(t, y, x, 2) = std::clamp(b * p.brightness, static_cast<real>(0), static_cast<real>(1));
            }
        }
    }
}

} // namespace

Tensor warp_frames(const Tensor& frames, const std::array<real, 9>& h) {
    const int T = frames.dim(0), H = frames.dim(1), W = frames.dim(2);
    Tensor out({T, H, W, 3});
    std::vector<real> plane(static_cast<size_t>(H) * W);
    for (int t = 0; t < T; ++t) {
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    plane[static_cast<size_t>(y) * W + x] = frames.at(t, y, x, c);
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const real xo = x + 0.5, yo = y + 0.5;
                    const real denom = h[6] * xo + h[7] * yo + h[8];
                    const real xi = (h[0] * xo + h[1] * yo + h[2]) / denom;
                    const real yi = (h[3] * xo + h[4] * yo + h[5]) / denom;
                    out.at(t, y, x, c) = kernels::bilinear_at(plane.data(), H, W, yi - 0.5, xi - 0.5);
                }
            }
        }
    }
    return out;
}

std::pair<data::VideoSequence, data::VideoSequence> augment_pair(const data::VideoSequence& seq,
                                                                 const AugmentConfig& cfg, Rng& rng,
                                                                 AugmentRecord* record) {
    const int H = seq.height(), W = seq.width();
    AugmentRecord rec;

    // Shared geometric transform: horizontal flip folded into the jittered
    // corner quad, solved as one homography.
    const bool flip = cfg.flip_prob > 0 && rng.bernoulli(cfg.flip_prob);
    std::array<std::pair<real, real>, 4> dst_corners = {
        std::pair<real, real>{0, 0}, {static_cast<real>(W), 0},
        {static_cast<real>(W), static_cast<real>(H)}, {0, static_cast<real>(H)}};
    std::array<std::pair<real, real>, 4> src_corners = dst_corners;
    if (cfg.perspective_frac > 0) {
        const real jx = cfg.perspective_frac * W;
        const real jy = cfg.perspective_frac * H;
        for (auto& [x, y] : src_corners) {
            x += rng.uniform(-jx, jx);
            y += rng.uniform(-jy, jy);
        }
    }
    if (flip)
        for (auto& [x, y] : src_corners) x = static_cast<real>(W) - x;

    const bool geom_identity = !flip && cfg.perspective_frac <= 0;
    if (!geom_identity) {
        rec.geom.is_identity = false;
        rec.geom.out_to_in = homography_from_quads(dst_corners, src_corners);
        rec.geom.in_to_out = invert_homography(rec.geom.out_to_in);
    }

    auto draw_chroma = [&rng](real amplitude) {
        ChromaticParams p;
        if (amplitude > 0) {
            p.brightness = rng.uniform(1.0 - amplitude, 1.0 + amplitude);
            p.contrast = rng.uniform(1.0 - amplitude, 1.0 + amplitude);
            p.saturation = rng.uniform(1.0 - amplitude, 1.0 + amplitude);
        }
        return p;
    };
    rec.weak = draw_chroma(cfg.weak_chroma);
    rec.strong = draw_chroma(cfg.strong_chroma);

    // Random erasing parameters (strong only), one rectangle reused across
    // the sequence.
    {
        const real area_frac = rng.uniform(cfg.erase_area_min, cfg.erase_area_max);
        const real aspect = rng.uniform(0.5, 2.0);
        const real area = area_frac * H * W;
        int ew = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, W);
        int eh = std::clamp(static_cast<int>(std::lround(area / ew)), 1, H);
        rec.erase.active = cfg.erase_area_max > 0;
        rec.erase.w = ew;
        rec.erase.h = eh;
        rec.erase.x = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(W - ew + 1)));
        rec.erase.y = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(H - eh + 1)));
        rec.erase.noise = Tensor({eh, ew, 3});
        for (long i = 0; i < rec.erase.noise.numel(); ++i) rec.erase.noise[i] = rng.uniform();
    }

    data::VideoSequence weak = seq;
    weak.labels.clear();
    weak.has_labels = false;
    weak.has_depth = false;
    weak.depth = Tensor();
    if (!geom_identity) weak.frames = warp_frames(seq.frames, rec.geom.out_to_in);

    data::VideoSequence strong = weak; // shares the geometric result
    apply_chroma_inplace(weak.frames, rec.weak);
    apply_chroma_inplace(strong.frames, rec.strong);

    if (rec.erase.active) {
        const int T = strong.t_len();
        for (int t = 0; t < T; ++t)
            for (int y = 0; y < rec.erase.h; ++y)
                for (int x = 0; x < rec.erase.w; ++x)
                    for (int c = 0; c < 3; ++c)
                        strong.frames.at(t, rec.erase.y + y, rec.erase.x + x, c) =
                            rec.erase.noise.at(y, x, c);
    }

    if (record) *record = rec;
    return {std::move(weak), std::move(strong)};
}

std::vector<int> mask_frames(int t_len, real r_percent, Rng& rng) {
    if (t_len < 1) throw std::invalid_argument("mask_frames: t_len must be >= 1");
    if (r_percent < 0 || r_percent > 75)
        throw std::invalid_argument("mask_frames: r must be in [0, 75]");
    int n_mask = static_cast<int>(std::floor(r_percent * t_len / 100.0));
    n_mask = std::min(n_mask, t_len - 1); // keep at least one frame

    std::vector<int> idx(static_cast<size_t>(t_len));
    for (int i = 0; i < t_len; ++i) idx[static_cast<size_t>(i)] = i;
    // Partial Fisher-Yates: the first n_mask entries become the masked set.
    for (int i = 0; i < n_mask; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(t_len - i)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    std::vector<int> retained(idx.begin() + n_mask, idx.end());
    std::sort(retained.begin(), retained.end());
    return retained;
}

} // namespace starmt::sfda
