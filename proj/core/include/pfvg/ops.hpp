#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pfvg/tensor.hpp"

namespace pfvg {

// Elementwise binary ops. `b` must match `a` exactly, be 1-D matching the
// last axis of `a`, or hold a single value; anything else is a ShapeError.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);

Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m x k] * [n x k]^T -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax_last(const Tensor& x);

/// Normalizes over the last axis. `gain` and `bias` are optional (undefined
/// tensors skip the affine step) and must be 1-D over the last axis.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

Tensor reshape(const Tensor& a, Shape dims);

// Row/column views over rank-2 tensors (rows generalize to the leading axis).
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);

/// Output row r is table row ids[r].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);

/// Output row g is the mean of the listed input rows.
Tensor pool_rows(const Tensor& a, const std::vector<std::vector<std::size_t>>& groups);

/// Mean squared difference over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

} // namespace pfvg
