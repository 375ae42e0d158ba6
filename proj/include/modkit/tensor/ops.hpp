// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every op validates shapes and throws ShapeError
// naming itself and the offending shapes. Elementwise binary ops require
// equal rank and broadcast only size-1 axes.
//
// Reductions accumulate left to right in row-major order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "modkit/tensor/autodiff.hpp"

namespace modkit {

/// Output shape of a size-1-axis broadcast between a and b.
Shape broadcast_shape(const char* op, const Shape& a, const Shape& b);

/// Sums `g` down to `target` along the broadcast axes.
template <class T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& target);

// Elementwise -------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> scale(const Var<T>& a, T s);
template <class T>
Var<T> add_scalar(const Var<T>& a, T s);
template <class T>
Var<T> exp(const Var<T>& a);
/// Natural log; non-positive inputs throw DomainError.
template <class T>
Var<T> log(const Var<T>& a);
/// Saturates at the largest representable magnitude below 1.
template <class T>
Var<T> tanh(const Var<T>& a);
template <class T>
Var<T> relu(const Var<T>& a);

// Reductions --------------------------------------------------------------

template <class T>
Var<T> sum(const Var<T>& a);
template <class T>
Var<T> mean(const Var<T>& a);
/// Mean over one axis, keeping it with extent 1.
template <class T>
Var<T> mean_axis(const Var<T>& a, std::size_t axis);

// Shape manipulation ------------------------------------------------------

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape);
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <class T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <class T>
Var<T> transpose_last2(const Var<T>& a);
/// Keeps the listed positions of the last axis, in order.
template <class T>
Var<T> gather_last(const Var<T>& a, const std::vector<std::size_t>& index);
/// Writes the last axis of `a` into positions `index` of a zero tensor whose
/// last extent is `width` (on-demand padding into a residual stream).
template <class T>
Var<T> scatter_last(const Var<T>& a, const std::vector<std::size_t>& index, std::size_t width);

// Linear algebra ----------------------------------------------------------

/// (M,K)x(K,N) or batched (B,M,K)x(B,K,N).
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x(..., in) * W(out, in)^T + bias(out). `bias` may be invalid (no bias).
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

// Normalization / similarity ----------------------------------------------

/// Softmax over the last axis (max-subtracted).
template <class T>
Var<T> softmax(const Var<T>& a);
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));
/// Cosine similarity of two vectors. A zero-norm argument throws DomainError.
template <class T>
Var<T> cosine(const Var<T>& a, const Var<T>& b);
/// Divides each row of a rank-2 tensor by its L2 norm; zero rows stay zero
/// and pass no gradient.
template <class T>
Var<T> normalize_rows(const Var<T>& a);
/// Mean of the listed (row, col) entries of a rank-2 tensor.
template <class T>
Var<T> mean_of_entries(const Var<T>& a, const std::vector<std::pair<std::size_t, std::size_t>>& entries);

// Losses ------------------------------------------------------------------

/// Mean cross-entropy of logits (B,C) against integer labels in [0,C).
template <class T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::int32_t>& labels);

// Convolution -------------------------------------------------------------

/// x (B,C,H,W), weight (O,C,kh,kw), bias (O) -> (B,O,H',W').
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t padding);
/// Non-overlapping k x k max pooling over (B,C,H,W); H and W are floored.
template <class T>
Var<T> max_pool2d(const Var<T>& x, std::size_t k);

// Non-differentiable helpers ---------------------------------------------

/// (B,C,H,W) -> (B, (H/p)*(W/p), C*p*p), patches in row-major order.
template <class T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch);

}  // namespace modkit
