#pragma once

#include <vector>

#include "ivf/tape.hpp"
#include "ivf/tensor.hpp"

namespace ivf::ops {

// Shape algebra ------------------------------------------------------------

/// Numpy-style broadcast of two shapes (align trailing, extent-1 stretches).
Shape broadcast_shapes(const Shape& a, const Shape& b);

/// Sums `g` down to `target` (inverse of broadcasting). Identity when the
/// shapes already match.
Tensor reduce_to(const Tensor& g, const Shape& target);

// Elementwise / arithmetic ---------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor gelu(const Tensor& x);  // exact erf form

// Linear algebra -------------------------------------------------------------

/// Batched matrix product a[...,m,k] * b[...,k,n] -> [...,m,n]; leading
/// extents broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

// Normalization --------------------------------------------------------------

/// Per-last-axis standardization followed by gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, size_t axis);

// Reductions -----------------------------------------------------------------

Tensor mean_axis(const Tensor& x, size_t axis);  // drops the axis
Tensor sum_all(const Tensor& x);                 // scalar

// Structure ------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);  // view, never copies
Tensor permute(const Tensor& x, const std::vector<size_t>& perm);
Tensor transpose_last2(const Tensor& x);

/// Contiguous region copy, [start, stop) per axis.
Tensor slice(const Tensor& x, const std::vector<size_t>& starts,
             const std::vector<size_t>& stops);
Tensor slice_axis(const Tensor& x, size_t axis, size_t start, size_t stop);

Tensor concat(const std::vector<Tensor>& parts, size_t axis);

/// Embeds `x` into a zero tensor of `out_shape` at per-axis `offsets`.
Tensor zero_pad_assign(const Tensor& x, Shape out_shape, const std::vector<size_t>& offsets);

// Debug hooks ----------------------------------------------------------------

/// Identity forward whose backward multiplies the incoming gradient by
/// `factor`. factor == 1 is a true no-op. Exists so gradient-check negative
/// controls can corrupt one backward path on purpose.
Tensor debug_grad_scale(const Tensor& x, double factor);

}  // namespace ivf::ops
