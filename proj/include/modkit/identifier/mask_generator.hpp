// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-layer mask generators. A generator reads the token-averaged input of
// its layer and emits one soft relevance score per output neuron in [0, 1).

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "modkit/nn/layers.hpp"

namespace modkit {

/// One flag per neuron (or kernel) of a layer.
using BinaryMask = std::vector<std::uint8_t>;

/// Hidden width used when none is given.
inline std::size_t default_generator_hidden(std::size_t width) { return width / 4 > 8 ? width / 4 : 8; }

template <class T>
struct MaskGenerator {
  Linear<T> hidden;
  Linear<T> out;

  /// The output bias starts at +0.5 so every neuron begins switched on.
  static MaskGenerator make(std::size_t in_dim, std::size_t width, std::size_t hidden_dim, Rng& rng);

  std::size_t in_dim() const { return hidden.in_dim(); }
  std::size_t width() const { return out.out_dim(); }
};

/// (B,D) -> (B,1,D); (B,N,D) -> (B,1,D) mean over tokens; (B,C,H,W) -> (B,1,C).
template <class T>
Var<T> pool_input(const Var<T>& x);

/// pooled (B,1,in) -> mask (B,1,width) = ReLU(Tanh(W2 ReLU(W1 x + b1) + b2)).
template <class T>
Var<T> generate_mask(Tape<T>& tape, MaskGenerator<T>& gen, const Var<T>& pooled);

/// Broadcasts mask (b,1,D) with b in {1,B} over h of shape (B,D), (B,N,D) or
/// (B,D,H,W), where D is the neuron/channel axis.
template <class T>
Var<T> apply_mask(const Var<T>& h, const Var<T>& m);

/// Bin(x) = x > 0 over the last axis of a single-sample mask.
BinaryMask binarize(const float* values, std::size_t n);
BinaryMask binarize(const double* values, std::size_t n);
std::size_t popcount(const BinaryMask& m);

extern template struct MaskGenerator<float>;
extern template struct MaskGenerator<double>;

}  // namespace modkit
