#include "starmt/core/kernels.hpp"

#include "starmt/core/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace starmt::kernels {

namespace {

inline int conv_out(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

} // namespace

Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.ndim() != 4 || w.ndim() != 4) throw std::invalid_argument("conv2d: expects 4-D x and w");
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Cin) throw std::invalid_argument("conv2d: channel mismatch");
    const int Ho = conv_out(H, kh, stride, pad);
    const int Wo = conv_out(W, kw, stride, pad);
    Tensor out({N, Cout, Ho, Wo});

    const real* xd = x.data();
    const real* wd = w.data();
    const bool has_b = b.numel() > 0;

    parallel_for(static_cast<long>(N) * Cout, [&](long idx) {
        const int n = static_cast<int>(idx / Cout);
        const int co = static_cast<int>(idx % Cout);
        real* op = out.data() + (static_cast<size_t>(n) * Cout + co) * Ho * Wo;
        const real bias = has_b ? b[co] : 0.0;
        for (int i = 0; i < Ho * Wo; ++i) op[i] = bias;
        for (int ci = 0; ci < Cin; ++ci) {
            const real* xp = xd + (static_cast<size_t>(n) * Cin + ci) * H * W;
            const real* wp = wd + (static_cast<size_t>(co) * Cin + ci) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const real wv = wp[ky * kw + kx];
                    if (wv == 0.0) continue;
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        const real* xrow = xp + static_cast<size_t>(iy) * W;
                        real* orow = op + static_cast<size_t>(oy) * Wo;
                        for (int ox = 0; ox < Wo; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= W) continue;
                            orow[ox] += wv * xrow[ix];
                        }
                    }
                }
            }
        }
    });
    return out;
}

void conv2d_bwd(const Tensor& x, const Tensor& w, const Tensor& g, int stride, int pad,
                Tensor* dx, Tensor* dw, Tensor* db) {
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int Ho = g.dim(2), Wo = g.dim(3);
    const real* xd = x.data();
    const real* wd = w.data();
    const real* gd = g.data();

    if (db) {
        // Disjoint output per co keeps the reduction deterministic.
        parallel_for(Cout, [&](long co) {
            real acc = 0.0;
            for (int n = 0; n < N; ++n) {
                const real* gp = gd + (static_cast<size_t>(n) * Cout + co) * Ho * Wo;
                for (int i = 0; i < Ho * Wo; ++i) acc += gp[i];
            }
            (*db)[co] += acc;
        });
    }

    if (dw) {
        parallel_for(Cout, [&](long co) {
            for (int ci = 0; ci < Cin; ++ci) {
                real* dwp = dw->data() + (static_cast<size_t>(co) * Cin + ci) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        real acc = 0.0;
                        for (int n = 0; n < N; ++n) {
                            const real* gp = gd + (static_cast<size_t>(n) * Cout + co) * Ho * Wo;
                            const real* xp = xd + (static_cast<size_t>(n) * Cin + ci) * H * W;
                            for (int oy = 0; oy < Ho; ++oy) {
                                const int iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= H) continue;
                                const real* xrow = xp + static_cast<size_t>(iy) * W;
                                const real* grow = gp + static_cast<size_t>(oy) * Wo;
                                for (int ox = 0; ox < Wo; ++ox) {
                                    const int ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= W) continue;
                                    acc += grow[ox] * xrow[ix];
                                }
                            }
                        }
                        dwp[ky * kw + kx] += acc;
                    }
                }
            }
        });
    }

    if (dx) {
        parallel_for(N, [&](long n) {
            for (int co = 0; co < Cout; ++co) {
                const real* gp = gd + (static_cast<size_t>(n) * Cout + co) * Ho * Wo;
                for (int ci = 0; ci < Cin; ++ci) {
                    real* dxp = dx->data() + (static_cast<size_t>(n) * Cin + ci) * H * W;
                    const real* wp = wd + (static_cast<size_t>(co) * Cin + ci) * kh * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                        for (int kx = 0; kx < kw; ++kx) {
                            const real wv = wp[ky * kw + kx];
                            if (wv == 0.0) continue;
                            for (int oy = 0; oy < Ho; ++oy) {
                                const int iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= H) continue;
                                real* dxrow = dxp + static_cast<size_t>(iy) * W;
                                const real* grow = gp + static_cast<size_t>(oy) * Wo;
                                for (int ox = 0; ox < Wo; ++ox) {
                                    const int ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= W) continue;
                                    dxrow[ix] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
}

real sigmoid(real v) {
    if (v >= 0) {
        const real z = std::exp(-v);
        return 1.0 / (1.0 + z);
    }
    const real z = std::exp(v);
    return z / (1.0 + z);
}

Tensor silu_fwd(const Tensor& x) {
    Tensor y(x.shape());
    const long n = x.numel();
    for (long i = 0; i < n; ++i) {
        const real v = x[i];
        y[i] = v * sigmoid(v);
    }
    return y;
}

void silu_bwd(const Tensor& x, const Tensor& g, Tensor* dx) {
    const long n = x.numel();
    for (long i = 0; i < n; ++i) {
        const real v = x[i];
        const real s = sigmoid(v);
        (*dx)[i] += g[i] * (s * (1.0 + v * (1.0 - s)));
    }
}

Tensor sigmoid_fwd(const Tensor& x) {
    Tensor y(x.shape());
    const long n = x.numel();
    for (long i = 0; i < n; ++i) y[i] = sigmoid(x[i]);
    return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw std::invalid_argument("matmul: inner dim mismatch");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        const real* ar = a.data() + static_cast<size_t>(i) * k;
        real* orow = out.data() + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const real av = ar[kk];
            if (av == 0.0) continue;
            const real* br = b.data() + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * br[j];
        }
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) throw std::invalid_argument("matmul_nt: inner dim mismatch");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        const real* ar = a.data() + static_cast<size_t>(i) * k;
        real* orow = out.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const real* br = b.data() + static_cast<size_t>(j) * k;
            real acc = 0.0;
            for (int kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
            orow[j] = acc;
        }
    }
    return out;
}

Tensor softmax_rows(const Tensor& x, real temp) {
    const int m = x.dim(0), n = x.dim(1);
    Tensor y({m, n});
    for (int i = 0; i < m; ++i) {
        const real* xr = x.data() + static_cast<size_t>(i) * n;
        real* yr = y.data() + static_cast<size_t>(i) * n;
        real mx = xr[0] / temp;
        for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j] / temp);
        real sum = 0.0;
        for (int j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] / temp - mx);
            sum += yr[j];
        }
        for (int j = 0; j < n; ++j) yr[j] /= sum;
    }
    return y;
}

Tensor rows_unit(const Tensor& x, real eps) {
    const int m = x.dim(0), n = x.dim(1);
    Tensor y({m, n});
    for (int i = 0; i < m; ++i) {
        const real* xr = x.data() + static_cast<size_t>(i) * n;
        real* yr = y.data() + static_cast<size_t>(i) * n;
        real s = 0.0;
        for (int j = 0; j < n; ++j) s += xr[j] * xr[j];
        const real inv = 1.0 / std::sqrt(s + eps);
        for (int j = 0; j < n; ++j) yr[j] = xr[j] * inv;
    }
    return y;
}

real bilinear_at(const real* plane, int H, int W, real y, real x) {
    const real yc = std::clamp(y, static_cast<real>(0), static_cast<real>(H - 1));
    const real xc = std::clamp(x, static_cast<real>(0), static_cast<real>(W - 1));
    const int y0 = static_cast<int>(std::floor(yc));
    const int x0 = static_cast<int>(std::floor(xc));
    const int y1 = std::min(y0 + 1, H - 1);
    const int x1 = std::min(x0 + 1, W - 1);
    const real fy = yc - y0;
    const real fx = xc - x0;
    const real v00 = plane[static_cast<size_t>(y0) * W + x0];
    const real v01 = plane[static_cast<size_t>(y0) * W + x1];
    const real v10 = plane[static_cast<size_t>(y1) * W + x0];
    const real v11 = plane[static_cast<size_t>(y1) * W + x1];
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
}

namespace {

std::vector<real> gaussian_taps(real sigma) {
    const int radius = std::max(0, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<real> taps(static_cast<size_t>(2 * radius + 1));
    if (radius == 0) {
        taps[0] = 1.0;
        return taps;
    }
    real sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const real v = std::exp(-0.5 * (static_cast<real>(i) * i) / (sigma * sigma));
        taps[static_cast<size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : taps) v /= sum;
    return taps;
}

} // namespace

real gaussian_kernel_sq_sum(real sigma) {
    const auto taps = gaussian_taps(sigma);
    real s = 0.0;
    for (real v : taps) s += v * v;
    return s;
}

void gaussian_blur_circular(const real* src, real* dst, int H, int W, real sigma) {
    const auto taps = gaussian_taps(sigma);
    const int radius = static_cast<int>(taps.size() / 2);
    std::vector<real> tmp(static_cast<size_t>(H) * W);
    // Horizontal pass.
    for (int y = 0; y < H; ++y) {
        const real* row = src + static_cast<size_t>(y) * W;
        real* trow = tmp.data() + static_cast<size_t>(y) * W;
        for (int x = 0; x < W; ++x) {
            real acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                int xx = (x + k) % W;
                if (xx < 0) xx += W;
                acc += taps[static_cast<size_t>(k + radius)] * row[xx];
            }
            trow[x] = acc;
        }
    }
    // Vertical pass.
    for (int y = 0; y < H; ++y) {
        real* drow = dst + static_cast<size_t>(y) * W;
        for (int x = 0; x < W; ++x) {
            real acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                int yy = (y + k) % H;
                if (yy < 0) yy += H;
                acc += taps[static_cast<size_t>(k + radius)] * tmp[static_cast<size_t>(yy) * W + x];
            }
            drow[x] = acc;
        }
    }
}

real normal_cdf(real x) { return 0.5 * (1.0 + std::erf(x * 0.70710678118654752440)); }

} // namespace starmt::kernels
