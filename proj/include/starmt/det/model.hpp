#pragma once

#include "starmt/core/autodiff.hpp"
#include "starmt/core/tensor.hpp"
#include "starmt/data/types.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace starmt::det {

// Four-stage conv backbone at total stride 8, one head level. The final
// stage width is the shared feature dimension feeding all heads and the
// temporal aggregation module.
struct Arch {
    int in_ch = 3;
    std::array<int, 4> widths{8, 16, 32, 64};
    int n_c = 4;

    static constexpr std::array<int, 4> stage_strides{2, 2, 2, 1};

    int stride() const { return 8; }
    int d_f() const { return widths[3]; }
    real attn_temp() const { return std::sqrt(static_cast<real>(d_f())); }

    std::string describe() const;
    uint64_t fingerprint() const;
};

enum class Scope { Backbone, Tam };

std::string scope_name(Scope s);
Scope scope_from_name(const std::string& s);

struct ParamTensor {
    std::string name;
    Scope scope = Scope::Backbone;
    Tensor t;
};

// Named parameter tensors in a fixed order; scopes partition the set.
struct ModelParams {
    Arch arch;
    std::vector<ParamTensor> tensors;

    static ModelParams init(const Arch& arch, uint64_t seed);

    Tensor& find(const std::string& name);
    const Tensor& find(const std::string& name) const;
    long total_params() const;
    void check_finite() const;
};

// Dense per-frame prediction maps. feat is the last shared feature map; the
// heads read it through 1x1 convolutions.
struct DenseGrid {
    Tensor feat; // [T, d_f, h, w]
    Tensor obj;  // [T, 1, h, w] logits
    Tensor cls;  // [T, n_c, h, w] logits
    Tensor box;  // [T, 4, h, w] regressands: center offset (x,y), log size (w,h)
};

// [T,H,W,3] image tensor -> [T,3,H,W] for convolution.
Tensor to_chw(const Tensor& frames);

// Inference forward pass; pure function of (frames, params).
DenseGrid backbone_forward(const Tensor& frames_hwc, const ModelParams& params);

// Trainable binding of a parameter set: tensors whose scope is in
// `trainable` become leaves, the rest constants.
struct BoundParams {
    std::vector<std::pair<std::string, ad::Var>> vars;
    ad::Var find(const std::string& name) const;
};

BoundParams bind(const ModelParams& params, bool backbone_trainable, bool tam_trainable);

struct GridAd {
    ad::Var feat;
    ad::Var obj;
    ad::Var cls;
    ad::Var box;
};

GridAd backbone_forward_ad(const Tensor& frames_hwc, const BoundParams& p, const Arch& arch);

data::Box decode_box(const real* regress, int row, int col, int stride, int H, int W);

} // namespace starmt::det
