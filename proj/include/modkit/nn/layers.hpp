// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "modkit/tensor/ops.hpp"

namespace modkit {

using Rng = std::mt19937_64;

/// Uniform He-style fan-in initialization: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <class T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, Rng& rng);

/// y = x W^T + b. W is (out_dim, in_dim).
template <class T>
struct Linear {
  Parameter<T> weight;
  Parameter<T> bias;

  static Linear make(std::size_t in_dim, std::size_t out_dim, Rng& rng);

  std::size_t out_dim() const { return weight.value.dim(0); }
  std::size_t in_dim() const { return weight.value.dim(1); }
  Var<T> forward(Tape<T>& tape, const Var<T>& x) { return linear(x, tape.param(weight), tape.param(bias)); }
};

/// Every output channel is one kernel: weight (out, in, k, k), bias (out).
template <class T>
struct Conv2d {
  Parameter<T> weight;
  Parameter<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 1;

  static Conv2d make(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng);

  std::size_t out_channels() const { return weight.value.dim(0); }
  std::size_t in_channels() const { return weight.value.dim(1); }
  Var<T> forward(Tape<T>& tape, const Var<T>& x) {
    return conv2d(x, tape.param(weight), tape.param(bias), stride, padding);
  }
};

template <class T>
struct LayerNorm {
  Parameter<T> gamma;
  Parameter<T> beta;

  static LayerNorm make(std::size_t dim);

  Var<T> forward(Tape<T>& tape, const Var<T>& x) { return layer_norm(x, tape.param(gamma), tape.param(beta)); }
};

extern template struct Linear<float>;
extern template struct Linear<double>;
extern template struct Conv2d<float>;
extern template struct Conv2d<double>;
extern template struct LayerNorm<float>;
extern template struct LayerNorm<double>;

}  // namespace modkit
