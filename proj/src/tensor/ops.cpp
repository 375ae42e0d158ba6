// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "modkit/tensor/kernels.hpp"

namespace modkit {
namespace {

template <class T>
const kernels::KernelTable<T>& K() {
  return kernels::active<T>();
}

enum class BinOp { kAdd, kSub, kMul };

template <class T>
T apply(BinOp op, T a, T b) {
  switch (op) {
    case BinOp::kAdd:
      return a + b;
    case BinOp::kSub:
      return a - b;
    case BinOp::kMul:
      return a * b;
  }
  return T(0);
}

// Row-major strides with zero stride on broadcast (size-1) axes.
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(shape.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[i] = (shape[i] == out[i]) ? s : 0;
    s *= shape[i];
  }
  return strides;
}

// Calls f(out_offset, a_offset, b_offset, row_len, a_step, b_step) once per
// row of the last axis of `out`.
template <class F>
void for_each_row(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const std::size_t rank = out.size();
  if (rank == 0) {
    f(0, 0, 0, 1, 0, 0);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t row = out[rank - 1];
  const std::size_t rows = row == 0 ? 0 : numel(out) / row;
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t oa = 0, ob = 0;
    for (std::size_t d = 0; d + 1 < rank; ++d) {
      oa += idx[d] * sa[d];
      ob += idx[d] * sb[d];
    }
    f(r * row, oa, ob, row, sa[rank - 1], sb[rank - 1]);
    for (std::size_t d = rank - 1; d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
}

template <class T>
Tensor<T> bcast_binary(const char* name, BinOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shape(name, a.shape(), b.shape());
  Tensor<T> out(out_shape);
  const auto& k = K<T>();
  if (a.shape() == b.shape()) {
    auto fn = op == BinOp::kAdd ? k.add : op == BinOp::kSub ? k.sub : k.mul;
    fn(out.size(), a.ptr(), b.ptr(), out.ptr());
    return out;
  }
  for_each_row(out_shape, a.shape(), b.shape(),
               [&](std::size_t o, std::size_t oa, std::size_t ob, std::size_t n, std::size_t da,
                   std::size_t db) {
                 if (da == 1 && db == 1) {
                   auto fn = op == BinOp::kAdd ? k.add : op == BinOp::kSub ? k.sub : k.mul;
                   fn(n, a.ptr() + oa, b.ptr() + ob, out.ptr() + o);
                   return;
                 }
                 for (std::size_t j = 0; j < n; ++j) {
                   out[o + j] = apply(op, a[oa + j * da], b[ob + j * db]);
                 }
               });
  return out;
}

template <class T>
Tensor<T> transpose2d(const T* src, std::size_t rows, std::size_t cols) {
  Tensor<T> out(Shape{cols, rows});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * cols + j];
  return out;
}

template <class T>
Tape<T>& tape_of(const Var<T>& a) {
  if (!a.valid()) throw UsageError("op applied to an empty variable");
  return a.tape();
}

template <class T>
Tensor<T> map_unary(const Tensor<T>& a, T (*fn)(T)) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
  return out;
}

}  // namespace

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a.size() != b.size()) throw ShapeError(op, a, b);
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else if (b[i] == 1) {
      out[i] = a[i];
    } else {
      throw ShapeError(op, a, b);
    }
  }
  return out;
}

template <class T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor<T> out(target);
  for_each_row(g.shape(), target, target,
               [&](std::size_t o, std::size_t ot, std::size_t, std::size_t n, std::size_t dt,
                   std::size_t) {
                 for (std::size_t j = 0; j < n; ++j) out[ot + j * dt] = out[ot + j * dt] + g[o + j];
               });
  return out;
}

// Elementwise ---------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& tape = tape_of(a);
  const auto ia = a.id(), ib = b.id();
  return tape.record(bcast_binary("add", BinOp::kAdd, a.value(), b.value()), {a, b},
                     [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(ia)) t.accumulate(ia, reduce_to_shape(g, t.value(ia).shape()));
                       if (t.requires_grad(ib)) t.accumulate(ib, reduce_to_shape(g, t.value(ib).shape()));
                     });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  auto& tape = tape_of(a);
  const auto ia = a.id(), ib = b.id();
  return tape.record(bcast_binary("sub", BinOp::kSub, a.value(), b.value()), {a, b},
                     [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(ia)) t.accumulate(ia, reduce_to_shape(g, t.value(ia).shape()));
                       if (t.requires_grad(ib)) {
                         Tensor<T> neg(g.shape());
                         K<T>().scale(g.size(), T(-1), g.ptr(), neg.ptr());
                         t.accumulate(ib, reduce_to_shape(neg, t.value(ib).shape()));
                       }
                     });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto& tape = tape_of(a);
  const auto ia = a.id(), ib = b.id();
  return tape.record(bcast_binary("mul", BinOp::kMul, a.value(), b.value()), {a, b},
                     [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                       const auto& va = t.value(ia);
                       const auto& vb = t.value(ib);
                       if (t.requires_grad(ia)) {
                         t.accumulate(ia, reduce_to_shape(bcast_binary("mul", BinOp::kMul, g, vb), va.shape()));
                       }
                       if (t.requires_grad(ib)) {
                         t.accumulate(ib, reduce_to_shape(bcast_binary("mul", BinOp::kMul, g, va), vb.shape()));
                       }
                     });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  auto& tape = tape_of(a);
  Tensor<T> out(a.shape());
  K<T>().scale(out.size(), s, a.value().ptr(), out.ptr());
  const auto ia = a.id();
  return tape.record(std::move(out), {a}, [ia, s](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> ga(g.shape());
    K<T>().scale(g.size(), s, g.ptr(), ga.ptr());
    t.accumulate(ia, ga);
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  auto& tape = tape_of(a);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + s;
  const auto ia = a.id();
  return tape.record(std::move(out), {a}, [ia](Tape<T>& t, const Tensor<T>& g) { t.accumulate(ia, g); });
}

template <class T>
Var<T> exp(const Var<T>& a) {
  auto& tape = tape_of(a);
  Tensor<T> out = map_unary<T>(a.value(), [](T x) { return std::exp(x); });
  const auto ia = a.id();
  const auto self = static_cast<std::uint32_t>(tape.size());
  return tape.record(std::move(out), {a}, [ia, self](Tape<T>& t, const Tensor<T>& g) {
    const auto& y = t.value(self);
    Tensor<T> ga(g.shape());
    K<T>().mul(g.size(), g.ptr(), y.ptr(), ga.ptr());
    t.accumulate(ia, ga);
  });
}

template <class T>
Var<T> log(const Var<T>& a) {
  auto& tape = tape_of(a);
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > T(0))) throw DomainError("log: non-positive argument " + std::to_string(x[i]));
    out[i] = std::log(x[i]);
  }
  const auto ia = a.id();
  return tape.record(std::move(out), {a}, [ia](Tape<T>& t, const Tensor<T>& g) {
    const auto& xv = t.value(ia);
    Tensor<T> ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / xv[i];
    t.accumulate(ia, ga);
  });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  auto& tape = tape_of(a);
  // Saturated values are pulled one ulp inside (-1, 1) so relu(tanh(z)) < 1
  // holds for every finite z.
  Tensor<T> out = map_unary<T>(a.value(), [](T x) {
    constexpr T kEdge = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    return std::clamp(std::tanh(x), -kEdge, kEdge);
  });
  const auto ia = a.id();
  const auto self = static_cast<std::uint32_t>(tape.size());
  return tape.record(std::move(out), {a}, [ia, self](Tape<T>& t, const Tensor<T>& g) {
    const auto& y = t.value(self);
    Tensor<T> ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (T(1) - y[i] * y[i]);
    t.accumulate(ia, ga);
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  auto& tape = tape_of(a);
  Tensor<T> out(a.shape());
  K<T>().relu(out.size(), a.value().ptr(), out.ptr());
  const auto ia = a.id();
  return tape.record(std::move(out), {a}, [ia](Tape<T>& t, const Tensor<T>& g) {
    if (!t.requires_grad(ia)) return;
    K<T>().relu_backward(g.size(), t.value(ia).ptr(), g.ptr(), t.grad_buffer(ia).ptr());
  });
}

// Reductions ----------------------------------------------------------------

template <class T>
Var<T> sum(const Var<T>& a) {
  auto& tape = tape_of(a);
  T s = T(0);
  for (T v : a.value().data()) s += v;
  const auto ia = a.id();
  return tape.record(Tensor<T>::scalar(s), {a}, [ia](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(ia, Tensor<T>(t.value(ia).shape(), g[0]));
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  auto& tape = tape_of(a);
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean", "empty tensor");
  T s = T(0);
  for (T v : a.value().data()) s += v;
  const auto ia = a.id();
  return tape.record(Tensor<T>::scalar(s / static_cast<T>(n)), {a},
                     [ia, n](Tape<T>& t, const Tensor<T>& g) {
                       t.accumulate(ia, Tensor<T>(t.value(ia).shape(), g[0] / static_cast<T>(n)));
                     });
}

template <class T>
Var<T> mean_axis(const Var<T>& a, std::size_t axis) {
  auto& tape = tape_of(a);
  const Shape& s = a.shape();
  if (axis >= s.size()) throw ShapeError("mean_axis", "axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
  const std::size_t n = s[axis];
  if (n == 0) throw ShapeError("mean_axis", "reduced axis is empty");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[axis] = 1;
  Tensor<T> out(os);
  const auto& x = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < n; ++r) {
      const T* src = x.ptr() + (o * n + r) * inner;
      T* dst = out.ptr() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] /= static_cast<T>(n);
  }
  const auto ia = a.id();
  return tape.record(std::move(out), {a}, [ia, outer, inner, n](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> ga(t.value(ia).shape());
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < inner; ++i) ga[(o * n + r) * inner + i] = g[o * inner + i] / static_cast<T>(n);
    t.accumulate(ia, ga);
  });
}

// Shape manipulation ----------------------------------------------------------

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  auto& tape = tape_of(a);
  if (numel(shape) != a.value().size()) throw ShapeError("reshape", a.shape(), shape);
  const auto ia = a.id();
  return tape.record(a.value().reshaped(std::move(shape)), {a}, [ia](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(ia, g.reshaped(t.value(ia).shape()));
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  auto& tape = tape_of(parts[0]);
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat", "axis out of range for " + shape_to_string(s0));
  Shape os = s0;
  os[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw ShapeError("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) throw ShapeError("concat", s0, s);
    os[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  Tensor<T> out(os);
  const std::size_t out_row = os[axis] * inner;
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> widths, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.value().ptr() + o * w, w, out.ptr() + o * out_row + off);
    ids.push_back(p.id());
    widths.push_back(w);
    offsets.push_back(off);
    off += w;
  }
  return tape.record(std::move(out), parts,
                     [ids, widths, offsets, outer, out_row](Tape<T>& t, const Tensor<T>& g) {
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (!t.requires_grad(ids[k])) continue;
                         Tensor<T> gp(t.value(ids[k]).shape());
                         for (std::size_t o = 0; o < outer; ++o)
                           std::copy_n(g.ptr() + o * out_row + offsets[k], widths[k], gp.ptr() + o * widths[k]);
                         t.accumulate(ids[k], gp);
                       }
                     });
}

template <class T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  auto& tape = tape_of(a);
  const Shape& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw ShapeError("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                  ") on axis " + std::to_string(axis) + " of " + shape_to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[axis] = end - begin;
  Tensor<T> out(os);
  const std::size_t in_row = s[axis] * inner, w = (end - begin) * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.value().ptr() + o * in_row + begin * inner, w, out.ptr() + o * w);
  const auto ia = a.id();
  return tape.record(std::move(out), {a}, [ia, outer, in_row, w, begin, inner](Tape<T>& t, const Tensor<T>& g) {
    if (!t.requires_grad(ia)) return;
    Tensor<T>& ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < outer; ++o) {
      T* dst = ga.ptr() + o * in_row + begin * inner;
      const T* src = g.ptr() + o * w;
      for (std::size_t i = 0; i < w; ++i) dst[i] = dst[i] + src[i];
    }
  });
}

template <class T>
Var<T> transpose_last2(const Var<T>& a) {
  auto& tape = tape_of(a);
  const Shape& s = a.shape();
  if (s.size() != 2 && s.size() != 3) throw ShapeError("transpose_last2", "rank must be 2 or 3, got " + shape_to_string(s));
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
  Shape os = s;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  Tensor<T> out(os);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor<T> tb = transpose2d(a.value().ptr() + b * r * c, r, c);
    std::copy_n(tb.ptr(), r * c, out.ptr() + b * r * c);
  }
  const auto ia = a.id();
  return tape.record(std::move(out), {a}, [ia, batch, r, c](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> ga(t.value(ia).shape());
    for (std::size_t b = 0; b < batch; ++b) {
      Tensor<T> tb = transpose2d(g.ptr() + b * r * c, c, r);
      std::copy_n(tb.ptr(), r * c, ga.ptr() + b * r * c);
    }
    t.accumulate(ia, ga);
  });
}

template <class T>
Var<T> gather_last(const Var<T>& a, const std::vector<std::size_t>& index) {
  auto& tape = tape_of(a);
  const Shape& s = a.shape();
  if (s.empty()) throw ShapeError("gather_last", "scalar input");
  const std::size_t w = s.back();
  for (auto i : index)
    if (i >= w) throw ShapeError("gather_last", "index " + std::to_string(i) + " >= width " + std::to_string(w));
  Shape os = s;
  os.back() = index.size();
  Tensor<T> out(os);
  const std::size_t rows = w == 0 ? 0 : a.value().size() / w;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < index.size(); ++j) out[r * index.size() + j] = a.value()[r * w + index[j]];
  const auto ia = a.id();
  return tape.record(std::move(out), {a}, [ia, index, rows, w](Tape<T>& t, const Tensor<T>& g) {
    if (!t.requires_grad(ia)) return;
    Tensor<T>& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < index.size(); ++j) ga[r * w + index[j]] += g[r * index.size() + j];
  });
}

template <class T>
Var<T> scatter_last(const Var<T>& a, const std::vector<std::size_t>& index, std::size_t width) {
  auto& tape = tape_of(a);
  const Shape& s = a.shape();
  if (s.empty() || s.back() != index.size()) {
    throw ShapeError("scatter_last", "last extent of " + shape_to_string(s) + " must equal index count " +
                                         std::to_string(index.size()));
  }
  for (auto i : index)
    if (i >= width) throw ShapeError("scatter_last", "index " + std::to_string(i) + " >= width " + std::to_string(width));
  Shape os = s;
  os.back() = width;
  Tensor<T> out(os);
  const std::size_t k = index.size();
  const std::size_t rows = width == 0 ? 0 : out.size() / width;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * width + index[j]] = a.value()[r * k + j];
  const auto ia = a.id();
  return tape.record(std::move(out), {a}, [ia, index, rows, width](Tape<T>& t, const Tensor<T>& g) {
    const std::size_t kk = index.size();
    Tensor<T> ga(t.value(ia).shape());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < kk; ++j) ga[r * kk + j] = g[r * width + index[j]];
    t.accumulate(ia, ga);
  });
}

// Linear algebra --------------------------------------------------------------

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& tape = tape_of(a);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool batched = sa.size() == 3;
  if (sa.size() != sb.size() || (sa.size() != 2 && sa.size() != 3) || sa.back() != sb[sb.size() - 2] ||
      (batched && sa[0] != sb[0])) {
    throw ShapeError("matmul", sa, sb);
  }
  const std::size_t batch = batched ? sa[0] : 1;
  const std::size_t m = sa[sa.size() - 2], k = sa.back(), n = sb.back();
  Shape os = batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor<T> out(os);
  const auto& kt = K<T>();
  for (std::size_t bi = 0; bi < batch; ++bi)
    kt.gemm_nn(m, k, n, a.value().ptr() + bi * m * k, b.value().ptr() + bi * k * n, out.ptr() + bi * m * n);
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib, batch, m, k, n](Tape<T>& t, const Tensor<T>& g) {
    const auto& kt2 = K<T>();
    if (t.requires_grad(ia)) {
      Tensor<T>& ga = t.grad_buffer(ia);
      for (std::size_t bi = 0; bi < batch; ++bi) {
        Tensor<T> bt = transpose2d(t.value(ib).ptr() + bi * k * n, k, n);
        kt2.gemm_nn(m, n, k, g.ptr() + bi * m * n, bt.ptr(), ga.ptr() + bi * m * k);
      }
    }
    if (t.requires_grad(ib)) {
      Tensor<T>& gb = t.grad_buffer(ib);
      for (std::size_t bi = 0; bi < batch; ++bi)
        kt2.gemm_tn(k, m, n, t.value(ia).ptr() + bi * m * k, g.ptr() + bi * m * n, gb.ptr() + bi * k * n);
    }
  });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  auto& tape = tape_of(x);
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sw.size() != 2 || sx.empty() || sx.back() != sw[1]) throw ShapeError("linear", sx, sw);
  const std::size_t out_dim = sw[0], in_dim = sw[1];
  const bool has_bias = bias.valid();
  if (has_bias && bias.shape() != Shape{out_dim}) throw ShapeError("linear(bias)", sw, bias.shape());
  const std::size_t rows = in_dim == 0 ? numel(Shape(sx.begin(), sx.end() - 1)) : x.value().size() / in_dim;
  Shape os = sx;
  os.back() = out_dim;
  Tensor<T> out(os);
  const auto& kt = K<T>();
  Tensor<T> wt = transpose2d(weight.value().ptr(), out_dim, in_dim);
  kt.gemm_nn(rows, in_dim, out_dim, x.value().ptr(), wt.ptr(), out.ptr());
  if (has_bias) {
    for (std::size_t r = 0; r < rows; ++r) kt.add(out_dim, out.ptr() + r * out_dim, bias.value().ptr(), out.ptr() + r * out_dim);
  }
  const auto ix = x.id(), iw = weight.id();
  const std::uint32_t ib = has_bias ? bias.id() : 0;
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return tape.record(std::move(out), inputs,
                     [ix, iw, ib, has_bias, rows, in_dim, out_dim](Tape<T>& t, const Tensor<T>& g) {
                       const auto& kt2 = K<T>();
                       if (t.requires_grad(ix)) {
                         kt2.gemm_nn(rows, out_dim, in_dim, g.ptr(), t.value(iw).ptr(), t.grad_buffer(ix).ptr());
                       }
                       if (t.requires_grad(iw)) {
                         kt2.gemm_tn(out_dim, rows, in_dim, g.ptr(), t.value(ix).ptr(), t.grad_buffer(iw).ptr());
                       }
                       if (has_bias && t.requires_grad(ib)) {
                         Tensor<T>& gb = t.grad_buffer(ib);
                         for (std::size_t r = 0; r < rows; ++r) kt2.add(out_dim, gb.ptr(), g.ptr() + r * out_dim, gb.ptr());
                       }
                     });
}

// Normalization / similarity ----------------------------------------------------

template <class T>
Var<T> softmax(const Var<T>& a) {
  auto& tape = tape_of(a);
  const Shape& s = a.shape();
  if (s.empty() || s.back() == 0) throw ShapeError("softmax", "needs a non-empty last axis, got " + shape_to_string(s));
  const std::size_t n = s.back(), rows = a.value().size() / n;
  Tensor<T> out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.value().ptr() + r * n;
    T* y = out.ptr() + r * n;
    T mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    T z = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  const auto ia = a.id();
  const auto self = static_cast<std::uint32_t>(tape.size());
  return tape.record(std::move(out), {a}, [ia, self, n, rows](Tape<T>& t, const Tensor<T>& g) {
    const auto& y = t.value(self);
    Tensor<T> ga(y.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] = y[r * n + j] * (g[r * n + j] - dot);
    }
    t.accumulate(ia, ga);
  });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  auto& tape = tape_of(x);
  const Shape& s = x.shape();
  if (s.empty() || s.back() == 0) throw ShapeError("layer_norm", "needs a non-empty last axis");
  const std::size_t d = s.back(), rows = x.value().size() / d;
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) throw ShapeError("layer_norm", s, gamma.shape());
  Tensor<T> out(s);
  Tensor<T> xhat(s);
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.value().ptr() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * inv;
      out[r * d + j] = xhat[r * d + j] * gamma.value()[j] + beta.value()[j];
    }
  }
  const auto ix = x.id(), ig = gamma.id(), ibeta = beta.id();
  return tape.record(std::move(out), {x, gamma, beta},
                     [ix, ig, ibeta, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                         Tape<T>& t, const Tensor<T>& g) {
                       const auto& gm = t.value(ig);
                       if (t.requires_grad(ix)) {
                         Tensor<T> gx(xhat.shape());
                         std::vector<T> dxhat(d);
                         for (std::size_t r = 0; r < rows; ++r) {
                           T s1 = T(0), s2 = T(0);
                           for (std::size_t j = 0; j < d; ++j) {
                             dxhat[j] = g[r * d + j] * gm[j];
                             s1 += dxhat[j];
                             s2 += dxhat[j] * xhat[r * d + j];
                           }
                           const T c = inv_std[r] / static_cast<T>(d);
                           for (std::size_t j = 0; j < d; ++j) {
                             gx[r * d + j] = c * (static_cast<T>(d) * dxhat[j] - s1 - xhat[r * d + j] * s2);
                           }
                         }
                         t.accumulate(ix, gx);
                       }
                       if (t.requires_grad(ig)) {
                         Tensor<T>& gg = t.grad_buffer(ig);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
                       }
                       if (t.requires_grad(ibeta)) {
                         Tensor<T>& gb = t.grad_buffer(ibeta);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                       }
                     });
}

template <class T>
Var<T> cosine(const Var<T>& a, const Var<T>& b) {
  auto& tape = tape_of(a);
  if (a.value().size() != b.value().size() || a.value().size() == 0) throw ShapeError("cosine", a.shape(), b.shape());
  const auto& va = a.value();
  const auto& vb = b.value();
  T dot = T(0), na2 = T(0), nb2 = T(0);
  for (std::size_t i = 0; i < va.size(); ++i) {
    dot += va[i] * vb[i];
    na2 += va[i] * va[i];
    nb2 += vb[i] * vb[i];
  }
  if (na2 == T(0) || nb2 == T(0)) throw DomainError("cosine: zero-norm argument");
  const T na = std::sqrt(na2), nb = std::sqrt(nb2);
  const T c = dot / (na * nb);
  const auto ia = a.id(), ib = b.id();
  return tape.record(Tensor<T>::scalar(c), {a, b}, [ia, ib, na, nb, c](Tape<T>& t, const Tensor<T>& g) {
    const auto& xa = t.value(ia);
    const auto& xb = t.value(ib);
    const T gs = g[0];
    if (t.requires_grad(ia)) {
      Tensor<T> ga(xa.shape());
      for (std::size_t i = 0; i < xa.size(); ++i) ga[i] = gs * (xb[i] / (na * nb) - c * xa[i] / (na * na));
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ib)) {
      Tensor<T> gb(xb.shape());
      for (std::size_t i = 0; i < xb.size(); ++i) gb[i] = gs * (xa[i] / (na * nb) - c * xb[i] / (nb * nb));
      t.accumulate(ib, gb);
    }
  });
}

template <class T>
Var<T> normalize_rows(const Var<T>& a) {
  auto& tape = tape_of(a);
  if (a.shape().size() != 2) throw ShapeError("normalize_rows", "expects rank 2, got " + shape_to_string(a.shape()));
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor<T> out(a.shape());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.value().ptr() + r * cols;
    T s = T(0);
    for (std::size_t j = 0; j < cols; ++j) s += x[j] * x[j];
    norms[r] = std::sqrt(s);
    if (norms[r] > T(0))
      for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = x[j] / norms[r];
  }
  const auto ia = a.id();
  const auto self = static_cast<std::uint32_t>(tape.size());
  return tape.record(std::move(out), {a}, [ia, self, rows, cols, norms = std::move(norms)](Tape<T>& t, const Tensor<T>& g) {
    const auto& u = t.value(self);
    Tensor<T> ga(u.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      if (!(norms[r] > T(0))) continue;
      T dot = T(0);
      for (std::size_t j = 0; j < cols; ++j) dot += u[r * cols + j] * g[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] = (g[r * cols + j] - u[r * cols + j] * dot) / norms[r];
    }
    t.accumulate(ia, ga);
  });
}

template <class T>
Var<T> mean_of_entries(const Var<T>& a, const std::vector<std::pair<std::size_t, std::size_t>>& entries) {
  auto& tape = tape_of(a);
  if (a.shape().size() != 2) throw ShapeError("mean_of_entries", "expects rank 2, got " + shape_to_string(a.shape()));
  if (entries.empty()) throw UsageError("mean_of_entries: empty entry list");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  T s = T(0);
  for (const auto& [i, j] : entries) {
    if (i >= rows || j >= cols) throw ShapeError("mean_of_entries", "entry out of range of " + shape_to_string(a.shape()));
    s += a.value()[i * cols + j];
  }
  const T n = static_cast<T>(entries.size());
  const auto ia = a.id();
  return tape.record(Tensor<T>::scalar(s / n), {a}, [ia, entries, cols, n](Tape<T>& t, const Tensor<T>& g) {
    if (!t.requires_grad(ia)) return;
    Tensor<T>& ga = t.grad_buffer(ia);
    const T w = g[0] / n;
    for (const auto& [i, j] : entries) ga[i * cols + j] += w;
  });
}

// Losses ------------------------------------------------------------------------

template <class T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::int32_t>& labels) {
  auto& tape = tape_of(logits);
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size() || s[0] == 0) {
    throw ShapeError("cross_entropy", "logits " + shape_to_string(s) + " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = s[0], c = s[1];
  for (auto l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= c) {
      throw UsageError("cross_entropy: label " + std::to_string(l) + " outside [0," + std::to_string(c) + ")");
    }
  Tensor<T> probs(s);
  T total = T(0);
  for (std::size_t r = 0; r < b; ++r) {
    const T* x = logits.value().ptr() + r * c;
    T mx = x[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      probs[r * c + j] = std::exp(x[j] - mx);
      z += probs[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] /= z;
    total += (std::log(z) + mx) - x[labels[r]];
  }
  const auto il = logits.id();
  return tape.record(Tensor<T>::scalar(total / static_cast<T>(b)), {logits},
                     [il, labels, b, c, probs = std::move(probs)](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T> gl = probs;
                       for (std::size_t r = 0; r < b; ++r) gl[r * c + labels[r]] -= T(1);
                       K<T>().scale(gl.size(), g[0] / static_cast<T>(b), gl.ptr(), gl.ptr());
                       t.accumulate(il, gl);
                     });
}

// Convolution ---------------------------------------------------------------------

namespace {

struct ConvGeom {
  std::size_t c, h, w, kh, kw, stride, pad, oh, ow;
  std::size_t ckk() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

template <class T>
void im2col(const T* img, const ConvGeom& g, T* col) {
  const std::size_t p = g.positions();
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const std::size_t row = (ci * g.kh + ki) * g.kw + kj;
        for (std::size_t oy = 0; oy < g.oh; ++oy)
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            T v = T(0);
            if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w))
              v = img[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)];
            col[row * p + oy * g.ow + ox] = v;
          }
      }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, T* img) {
  const std::size_t p = g.positions();
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const std::size_t row = (ci * g.kh + ki) * g.kw + kj;
        for (std::size_t oy = 0; oy < g.oh; ++oy)
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w))
              img[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += col[row * p + oy * g.ow + ox];
          }
      }
}

}  // namespace

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t padding) {
  auto& tape = tape_of(x);
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1] || stride == 0) throw ShapeError("conv2d", sx, sw);
  const bool has_bias = bias.valid();
  if (has_bias && bias.shape() != Shape{sw[0]}) throw ShapeError("conv2d(bias)", sw, bias.shape());
  if (sx[2] + 2 * padding < sw[2] || sx[3] + 2 * padding < sw[3]) throw ShapeError("conv2d", sx, sw);
  ConvGeom g{sx[1], sx[2], sx[3], sw[2], sw[3], stride, padding, 0, 0};
  g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
  g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
  const std::size_t batch = sx[0], outc = sw[0], p = g.positions(), ckk = g.ckk();
  Tensor<T> out(Shape{batch, outc, g.oh, g.ow});
  const auto& kt = K<T>();
  std::vector<T> col(ckk * p);
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(x.value().ptr() + b * g.c * g.h * g.w, g, col.data());
    T* ob = out.ptr() + b * outc * p;
    kt.gemm_nn(outc, ckk, p, weight.value().ptr(), col.data(), ob);
    if (has_bias)
      for (std::size_t o = 0; o < outc; ++o)
        for (std::size_t q = 0; q < p; ++q) ob[o * p + q] = ob[o * p + q] + bias.value()[o];
  }
  const auto ix = x.id(), iw = weight.id();
  const std::uint32_t ib = has_bias ? bias.id() : 0;
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return tape.record(std::move(out), inputs, [ix, iw, ib, has_bias, g, batch, outc](Tape<T>& t, const Tensor<T>& gr) {
    const auto& kt2 = K<T>();
    const std::size_t p2 = g.positions(), ckk2 = g.ckk(), img = g.c * g.h * g.w;
    std::vector<T> col2(ckk2 * p2);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* gb = gr.ptr() + b * outc * p2;
      if (t.requires_grad(iw)) {
        im2col(t.value(ix).ptr() + b * img, g, col2.data());
        Tensor<T> colt = transpose2d(col2.data(), ckk2, p2);
        kt2.gemm_nn(outc, p2, ckk2, gb, colt.ptr(), t.grad_buffer(iw).ptr());
      }
      if (t.requires_grad(ix)) {
        std::vector<T> dcol(ckk2 * p2, T(0));
        kt2.gemm_tn(ckk2, outc, p2, t.value(iw).ptr(), gb, dcol.data());
        col2im_add(dcol.data(), g, t.grad_buffer(ix).ptr() + b * img);
      }
      if (has_bias && t.requires_grad(ib)) {
        Tensor<T>& gbias = t.grad_buffer(ib);
        for (std::size_t o = 0; o < outc; ++o)
          for (std::size_t q = 0; q < p2; ++q) gbias[o] += gb[o * p2 + q];
      }
    }
  });
}

template <class T>
Var<T> max_pool2d(const Var<T>& x, std::size_t k) {
  auto& tape = tape_of(x);
  const Shape& s = x.shape();
  if (s.size() != 4 || k == 0 || s[2] < k || s[3] < k) throw ShapeError("max_pool2d", "cannot pool " + shape_to_string(s));
  const std::size_t bc = s[0] * s[1], h = s[2], w = s[3], oh = h / k, ow = w / k;
  Tensor<T> out(Shape{s[0], s[1], oh, ow});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t c = 0; c < bc; ++c)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = c * h * w + (oy * k) * w + ox * k;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t idx = c * h * w + (oy * k + i) * w + ox * k + j;
            if (x.value()[idx] > x.value()[best]) best = idx;
          }
        const std::size_t o = (c * oh + oy) * ow + ox;
        out[o] = x.value()[best];
        argmax[o] = best;
      }
  const auto ix = x.id();
  return tape.record(std::move(out), {x}, [ix, argmax = std::move(argmax)](Tape<T>& t, const Tensor<T>& g) {
    if (!t.requires_grad(ix)) return;
    Tensor<T>& gx = t.grad_buffer(ix);
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
  });
}

template <class T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch) {
  const Shape& s = images.shape();
  if (s.size() != 4 || patch == 0 || s[2] % patch != 0 || s[3] % patch != 0) {
    throw ShapeError("patchify", "image " + shape_to_string(s) + " not divisible by patch " + std::to_string(patch));
  }
  const std::size_t b = s[0], c = s[1], h = s[2], w = s[3];
  const std::size_t ph = h / patch, pw = w / patch, dim = c * patch * patch;
  Tensor<T> out(Shape{b, ph * pw, dim});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t py = 0; py < ph; ++py)
      for (std::size_t px = 0; px < pw; ++px) {
        T* dst = out.ptr() + (bi * ph * pw + py * pw + px) * dim;
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t i = 0; i < patch; ++i)
            for (std::size_t j = 0; j < patch; ++j)
              *dst++ = images[((bi * c + ci) * h + py * patch + i) * w + px * patch + j];
      }
  return out;
}

#define MODKIT_INSTANTIATE_OPS(T)                                                                     \
  template Tensor<T> reduce_to_shape(const Tensor<T>&, const Shape&);                                \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> scale(const Var<T>&, T);                                                           \
  template Var<T> add_scalar(const Var<T>&, T);                                                      \
  template Var<T> exp(const Var<T>&);                                                                \
  template Var<T> log(const Var<T>&);                                                                \
  template Var<T> tanh(const Var<T>&);                                                               \
  template Var<T> relu(const Var<T>&);                                                               \
  template Var<T> sum(const Var<T>&);                                                                \
  template Var<T> mean(const Var<T>&);                                                               \
  template Var<T> mean_axis(const Var<T>&, std::size_t);                                             \
  template Var<T> reshape(const Var<T>&, Shape);                                                     \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                                   \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);                       \
  template Var<T> transpose_last2(const Var<T>&);                                                    \
  template Var<T> gather_last(const Var<T>&, const std::vector<std::size_t>&);                       \
  template Var<T> scatter_last(const Var<T>&, const std::vector<std::size_t>&, std::size_t);         \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                               \
  template Var<T> softmax(const Var<T>&);                                                            \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                        \
  template Var<T> cosine(const Var<T>&, const Var<T>&);                                              \
  template Var<T> normalize_rows(const Var<T>&);                                                     \
  template Var<T> mean_of_entries(const Var<T>&, const std::vector<std::pair<std::size_t, std::size_t>>&); \
  template Var<T> cross_entropy(const Var<T>&, const std::vector<std::int32_t>&);                    \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t);     \
  template Var<T> max_pool2d(const Var<T>&, std::size_t);                                            \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);

MODKIT_INSTANTIATE_OPS(float)
MODKIT_INSTANTIATE_OPS(double)

}  // namespace modkit
