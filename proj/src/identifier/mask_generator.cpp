// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/identifier/mask_generator.hpp"

namespace modkit {

template <class T>
MaskGenerator<T> MaskGenerator<T>::make(std::size_t in_dim, std::size_t width, std::size_t hidden_dim, Rng& rng) {
  if (in_dim == 0 || width == 0) throw UsageError("MaskGenerator: zero-width layer");
  if (hidden_dim == 0) hidden_dim = default_generator_hidden(width);
  MaskGenerator g;
  g.hidden = Linear<T>::make(in_dim, hidden_dim, rng);
  g.out = Linear<T>::make(hidden_dim, width, rng);
  g.out.bias.value.fill(T(0.5));
  return g;
}

template <class T>
Var<T> pool_input(const Var<T>& x) {
  const Shape& s = x.shape();
  switch (s.size()) {
    case 2:
      return reshape(x, {s[0], 1, s[1]});
    case 3:
      return mean_axis(x, 1);
    case 4: {
      auto flat = reshape(x, {s[0], s[1], s[2] * s[3]});
      return reshape(mean_axis(flat, 2), {s[0], 1, s[1]});
    }
    default:
      throw ShapeError("pool_input", "expected rank 2, 3 or 4 input, got " + shape_to_string(s));
  }
}

template <class T>
Var<T> generate_mask(Tape<T>& tape, MaskGenerator<T>& gen, const Var<T>& pooled) {
  const Shape& s = pooled.shape();
  if (s.size() != 3 || s[1] != 1 || s[2] != gen.in_dim()) {
    throw ShapeError("generate_mask", s, Shape{s.empty() ? 0 : s[0], 1, gen.in_dim()});
  }
  auto x = reshape(pooled, {s[0], s[2]});
  auto h = relu(gen.hidden.forward(tape, x));
  auto m = relu(tanh(gen.out.forward(tape, h)));
  return reshape(m, {s[0], 1, gen.width()});
}

template <class T>
Var<T> apply_mask(const Var<T>& h, const Var<T>& m) {
  const Shape& hs = h.shape();
  const Shape& ms = m.shape();
  const bool ok_mask = ms.size() == 3 && ms[1] == 1 && (ms[0] == 1 || (!hs.empty() && ms[0] == hs[0]));
  if (!ok_mask || hs.size() < 2 || hs.size() > 4) throw ShapeError("apply_mask", hs, ms);
  const std::size_t b = ms[0], w = ms[2];
  switch (hs.size()) {
    case 2:
      if (hs[1] != w) throw ShapeError("apply_mask", hs, ms);
      return mul(h, reshape(m, {b, w}));
    case 3:
      if (hs[2] != w) throw ShapeError("apply_mask", hs, ms);
      return mul(h, m);
    default:
      if (hs[1] != w) throw ShapeError("apply_mask", hs, ms);
      return mul(h, reshape(m, {b, w, 1, 1}));
  }
}

BinaryMask binarize(const float* values, std::size_t n) {
  BinaryMask out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = values[i] > 0.0f ? 1 : 0;
  return out;
}

BinaryMask binarize(const double* values, std::size_t n) {
  BinaryMask out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = values[i] > 0.0 ? 1 : 0;
  return out;
}

std::size_t popcount(const BinaryMask& m) {
  std::size_t c = 0;
  for (auto v : m) c += v != 0;
  return c;
}

#define MODKIT_INSTANTIATE_IDENT(T)                                                  \
  template struct MaskGenerator<T>;                                                  \
  template Var<T> pool_input<T>(const Var<T>&);                                      \
  template Var<T> generate_mask<T>(Tape<T>&, MaskGenerator<T>&, const Var<T>&);       \
  template Var<T> apply_mask<T>(const Var<T>&, const Var<T>&);

MODKIT_INSTANTIATE_IDENT(float)
MODKIT_INSTANTIATE_IDENT(double)

}  // namespace modkit
