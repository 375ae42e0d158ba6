// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/nn/layers.hpp"

#include <cmath>

namespace modkit {

template <class T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in == 0 ? 1 : fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

template <class T>
Linear<T> Linear<T>::make(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
  if (out_dim == 0) throw UsageError("Linear: out_dim must be >= 1");
  Linear l;
  l.weight = Parameter<T>(he_uniform<T>({out_dim, in_dim}, in_dim, rng));
  l.bias = Parameter<T>(Tensor<T>(Shape{out_dim}));
  return l;
}

template <class T>
Conv2d<T> Conv2d<T>::make(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng) {
  if (out_channels == 0 || kernel == 0) throw UsageError("Conv2d: empty kernel set");
  Conv2d c;
  c.weight = Parameter<T>(he_uniform<T>({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng));
  c.bias = Parameter<T>(Tensor<T>(Shape{out_channels}));
  c.padding = kernel / 2;
  return c;
}

template <class T>
LayerNorm<T> LayerNorm<T>::make(std::size_t dim) {
  LayerNorm n;
  n.gamma = Parameter<T>(Tensor<T>(Shape{dim}, T(1)));
  n.beta = Parameter<T>(Tensor<T>(Shape{dim}));
  return n;
}

template Tensor<float> he_uniform<float>(Shape, std::size_t, Rng&);
template Tensor<double> he_uniform<double>(Shape, std::size_t, Rng&);
template struct Linear<float>;
template struct Linear<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;

}  // namespace modkit
