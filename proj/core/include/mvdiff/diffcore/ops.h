// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "mvdiff/diffcore/tape.h"

// Differentiable operations. Every op records its output on the tape of its
// first input and registers a backward rule. Broadcasting is limited to
// leading dimensions: a second operand may match a trailing suffix of the
// first operand's shape; anything else needs an explicit reshape.
namespace mvdiff::diff {

/// Batched matrix product over the last two dimensions.
/// `b` is either rank 2 (shared across all leading dims of `a`) or has the
/// same leading dims as `a`. With transpose_b the product is a·bᵀ.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b = false);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
template <typename T>
Var<T> square(Var<T> a);

// tanh approximation
template <typename T>
Var<T> gelu(Var<T> a);
template <typename T>
Var<T> silu(Var<T> a);

/// Softmax over the last dimension. An optional additive bias (shape equal
/// to a trailing suffix of the logits shape) is added before normalization.
template <typename T>
Var<T> softmax_rows(Var<T> logits, Var<T> additive_bias = {});

/// Normalizes the last dimension to zero mean and unit variance.
template <typename T>
Var<T> standardize_rows(Var<T> x, T eps);

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> offset, T eps);

/// Per-channel affine for [..., C, H, W] tensors. Either operand may be empty.
template <typename T>
Var<T> channel_affine(Var<T> x, Var<T> gain, Var<T> offset);

/// Group normalization for [B, C, H, W] tensors.
template <typename T>
Var<T> group_norm(Var<T> x, std::size_t groups, Var<T> gain, Var<T> offset, T eps);

/// Cross-correlation. x is [C, H, W] or [B, C, H, W]; kernel is
/// [C_out, C_in, kh, kw]. Output spatial size is floor((H + 2p - k) / s) + 1.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::size_t stride = 1, std::size_t pad = 0);

// 2x2 mean pooling and nearest 2x upsampling over the last two dims.
template <typename T>
Var<T> avg_pool2(Var<T> x);
template <typename T>
Var<T> upsample2(Var<T> x);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);
template <typename T>
Var<T> permute(Var<T> x, const std::vector<std::size_t>& order);
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end);

template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> mean(Var<T> x);

}  // namespace mvdiff::diff
