#pragma once

#include "starmt/core/tensor.hpp"

namespace starmt::kernels {

// 2-D convolution, NCHW layout, zero padding.
// x: [N,Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout] (may be empty) -> [N,Cout,Ho,Wo]
Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// Gradients of conv2d. Any of dx/dw/db may be null to skip.
void conv2d_bwd(const Tensor& x, const Tensor& w, const Tensor& g, int stride, int pad,
                Tensor* dx, Tensor* dw, Tensor* db);

Tensor silu_fwd(const Tensor& x);
void silu_bwd(const Tensor& x, const Tensor& g, Tensor* dx);

Tensor sigmoid_fwd(const Tensor& x);

// a: [m,k], b: [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a: [m,k], b: [n,k] -> [m,n]  (a * b^T)
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Row-wise softmax of x / temp. x: [m,n].
Tensor softmax_rows(const Tensor& x, real temp);

// Row-wise L2 normalization: y_i = x_i / sqrt(|x_i|^2 + eps).
Tensor rows_unit(const Tensor& x, real eps);

real sigmoid(real v);

// Bilinear sample with clamp-to-edge, single channel plane [H,W].
real bilinear_at(const real* plane, int H, int W, real y, real x);

// Separable Gaussian blur with circular (wrap-around) boundary on [H,W].
// Circular boundary keeps the output variance of white-noise input uniform
// across the plane. Kernel radius = ceil(3*sigma).
void gaussian_blur_circular(const real* src, real* dst, int H, int W, real sigma);

// Sum of squared taps of the 1-D kernel used by gaussian_blur_circular.
real gaussian_kernel_sq_sum(real sigma);

real normal_cdf(real x);

} // namespace starmt::kernels
