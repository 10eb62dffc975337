#pragma once

#include <array>
#include <vector>

#include "tensor/tensor.hpp"

namespace csts {

// Numpy-style broadcast of two shapes; throws DimensionError naming both.
Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op);

// Elementwise arithmetic with broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);

Tensor exp(const Tensor& x);
// Throws NumericError on non-positive input.
Tensor log(const Tensor& x);
// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& dims);
Tensor transpose(const Tensor& x, int a, int b);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, Index start, Index length);
std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<Index>& lengths);
// Broadcasts (tiles) x to `shape`.
Tensor broadcast_to(const Tensor& x, const Shape& shape);
// Repeats every element `factor` times along `axis` (nearest upsampling).
Tensor repeat_axis(const Tensor& x, int axis, Index factor);

// [..., m, k] @ [..., k, n] -> [..., m, n]; leading dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax_last(const Tensor& x);
Tensor log_softmax_last(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// x [..., in] @ weight [in, out] (+ bias [out]).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor());

// x / (||x||_2 + eps) over the last axis.
Tensor l2_normalize_last(const Tensor& x, double eps = 1e-12);

struct Dims3 {
    Index t = 1, h = 1, w = 1;
    friend bool operator==(const Dims3&, const Dims3&) = default;
};

// im2col over a [T, H, W, C] volume with zero padding. Output is
// [T', H', W', kt*kh*kw*C] with features ordered (dt, dh, dw, c).
Tensor extract_patches(const Tensor& x, Dims3 kernel, Dims3 stride, Dims3 padding);
Dims3 patch_grid(Dims3 input, Dims3 kernel, Dims3 stride, Dims3 padding);

// Linear interpolation along one axis, half-pixel centres (align_corners off).
Tensor interp_linear_axis(const Tensor& x, int axis, Index out_size);
// Separable trilinear resize of the three leading axes of [T, H, W, ...].
Tensor trilinear_resize(const Tensor& x, Dims3 out);

} // namespace csts
