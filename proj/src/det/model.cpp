#include "starmt/det/model.hpp"

#include "starmt/core/kernels.hpp"
#include "starmt/core/rng.hpp"
#include "starmt/io/hash.hpp"

#include <cmath>
#include <stdexcept>

namespace starmt::det {

std::string Arch::describe() const {
    std::string s = "conv4-stride8/in=" + std::to_string(in_ch);
    for (size_t i = 0; i < widths.size(); ++i)
        s += "/s" + std::to_string(i) + "=" + std::to_string(widths[i]) + "x" +
             std::to_string(stage_strides[i]);
    s += "/nc=" + std::to_string(n_c) + "/heads=obj,cls,box/tam=linear";
    return s;
}

uint64_t Arch::fingerprint() const { return io::fnv1a64(describe()); }

std::string scope_name(Scope s) { return s == Scope::Backbone ? "backbone" : "tam"; }

Scope scope_from_name(const std::string& s) {
    if (s == "backbone") return Scope::Backbone;
    if (s == "tam") return Scope::Tam;
    throw std::invalid_argument("unknown parameter scope: " + s);
}

ModelParams ModelParams::init(const Arch& arch, uint64_t seed) {
    Rng rng(seed);
    ModelParams p;
    p.arch = arch;

    auto he_conv = [&](const std::string& name, int cout, int cin, int k) {
        Tensor w({cout, cin, k, k});
        const real std = std::sqrt(2.0 / (static_cast<real>(cin) * k * k));
        for (long i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, std);
        p.tensors.push_back({name + ".w", Scope::Backbone, std::move(w)});
        p.tensors.push_back({name + ".b", Scope::Backbone, Tensor({cout})});
    };

    int cin = arch.in_ch;
    for (int s = 0; s < 4; ++s) {
        he_conv("conv" + std::to_string(s + 1), arch.widths[static_cast<size_t>(s)], cin, 3);
        cin = arch.widths[static_cast<size_t>(s)];
    }
    he_conv("head_obj", 1, arch.d_f(), 1);
    he_conv("head_cls", arch.n_c, arch.d_f(), 1);
    he_conv("head_box", 4, arch.d_f(), 1);
    // Low objectness prior keeps early training from flooding the grid.
    p.find("head_obj.b").fill(-2.0);

    Tensor tw({arch.n_c, arch.d_f()});
    for (long i = 0; i < tw.numel(); ++i) tw[i] = rng.normal(0.0, 0.02);
    p.tensors.push_back({"tam.w", Scope::Tam, std::move(tw)});
    p.tensors.push_back({"tam.b", Scope::Tam, Tensor({arch.n_c})});
    return p;
}

Tensor& ModelParams::find(const std::string& name) {
    for (auto& pt : tensors)
        if (pt.name == name) return pt.t;
    throw std::invalid_argument("ModelParams: unknown tensor " + name);
}

const Tensor& ModelParams::find(const std::string& name) const {
    for (const auto& pt : tensors)
        if (pt.name == name) return pt.t;
    throw std::invalid_argument("ModelParams: unknown tensor " + name);
}

long ModelParams::total_params() const {
    long n = 0;
    for (const auto& pt : tensors) n += pt.t.numel();
    return n;
}

void ModelParams::check_finite() const {
    for (const auto& pt : tensors)
        for (long i = 0; i < pt.t.numel(); ++i)
            if (!std::isfinite(pt.t[i]))
                throw std::runtime_error("ModelParams: non-finite value in " + pt.name);
}

Tensor to_chw(const Tensor& frames) {
    if (frames.ndim() != 4 || frames.dim(3) != 3)
        throw std::invalid_argument("to_chw: expects [T,H,W,3]");
    const int T = frames.dim(0), H = frames.dim(1), W = frames.dim(2);
    Tensor out({T, 3, H, W});
    for (int t = 0; t < T; ++t)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c) out.at(t, c, y, x) = frames.at(t, y, x, c);
    return out;
}

DenseGrid backbone_forward(const Tensor& frames_hwc, const ModelParams& params) {
    const Arch& arch = params.arch;
    if (frames_hwc.dim(1) % arch.stride() != 0 || frames_hwc.dim(2) % arch.stride() != 0)
        throw std::invalid_argument("backbone_forward: frame dims not divisible by stride");

    Tensor x = to_chw(frames_hwc);
    for (int s = 0; s < 4; ++s) {
        const std::string n = "conv" + std::to_string(s + 1);
        x = kernels::conv2d_fwd(x, params.find(n + ".w"), params.find(n + ".b"),
                                Arch::stage_strides[static_cast<size_t>(s)], 1);
        x = kernels::silu_fwd(x);
    }

    DenseGrid g;
    g.obj = kernels::conv2d_fwd(x, params.find("head_obj.w"), params.find("head_obj.b"), 1, 0);
    g.cls = kernels::conv2d_fwd(x, params.find("head_cls.w"), params.find("head_cls.b"), 1, 0);
    g.box = kernels::conv2d_fwd(x, params.find("head_box.w"), params.find("head_box.b"), 1, 0);
    g.feat = std::move(x);
    return g;
}

ad::Var BoundParams::find(const std::string& name) const {
    for (const auto& [n, v] : vars)
        if (n == name) return v;
    throw std::invalid_argument("BoundParams: unknown tensor " + name);
}

BoundParams bind(const ModelParams& params, bool backbone_trainable, bool tam_trainable) {
    BoundParams b;
    for (const auto& pt : params.tensors) {
        const bool trainable =
            pt.scope == Scope::Backbone ? backbone_trainable : tam_trainable;
        b.vars.emplace_back(pt.name, trainable ? ad::leaf(pt.t) : ad::constant(pt.t));
    }
    return b;
}

GridAd backbone_forward_ad(const Tensor& frames_hwc, const BoundParams& p, const Arch& arch) {
    if (frames_hwc.dim(1) % arch.stride() != 0 || frames_hwc.dim(2) % arch.stride() != 0)
        throw std::invalid_argument("backbone_forward_ad: frame dims not divisible by stride");
    ad::Var x = ad::constant(to_chw(frames_hwc));
    for (int s = 0; s < 4; ++s) {
        const std::string n = "conv" + std::to_string(s + 1);
        x = ad::conv2d(x, p.find(n + ".w"), p.find(n + ".b"),
                       Arch::stage_strides[static_cast<size_t>(s)], 1);
        x = ad::silu(x);
    }
    GridAd g;
    g.obj = ad::conv2d(x, p.find("head_obj.w"), p.find("head_obj.b"), 1, 0);
    g.cls = ad::conv2d(x, p.find("head_cls.w"), p.find("head_cls.b"), 1, 0);
    g.box = ad::conv2d(x, p.find("head_box.w"), p.find("head_box.b"), 1, 0);
    g.feat = x;
    return g;
}

data::Box decode_box(const real* r, int row, int col, int stride, int H, int W) {
    const real cx = (static_cast<real>(col) + r[0]) * stride;
    const real cy = (static_cast<real>(row) + r[1]) * stride;
    const real bw = std::exp(std::clamp(r[2], static_cast<real>(-8), static_cast<real>(8))) * stride;
    const real bh = std::exp(std::clamp(r[3], static_cast<real>(-8), static_cast<real>(8))) * stride;
    data::Box b;
    b.x1 = std::clamp(cx - 0.5 * bw, static_cast<real>(0), static_cast<real>(W));
    b.y1 = std::clamp(cy - 0.5 * bh, static_cast<real>(0), static_cast<real>(H));
    b.x2 = std::clamp(cx + 0.5 * bw, static_cast<real>(0), static_cast<real>(W));
    b.y2 = std::clamp(cy + 0.5 * bh, static_cast<real>(0), static_cast<real>(H));
    return b;
}

} // namespace starmt::det
