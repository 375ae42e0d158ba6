// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0
//
// Inner-loop kernels behind the tensor ops. Every kernel exists as a scalar
// reference and, on x86-64, as an AVX2 variant chosen at runtime.
//
// Equivalence contract: both variants produce bit-identical results. Vector
// lanes only ever run across independent output elements; every output
// element accumulates its terms in ascending reduction index, with a separate
// multiply and add (no FMA). The whole project builds with -ffp-contract=off
// so the scalar path cannot be contracted either.
//
// Transcendentals (exp, log, tanh) and full reductions stay scalar-only: a
// vectorized version would either change rounding or the summation order.

#pragma once

#include <cstddef>
#include <string_view>

namespace modkit::kernels {

enum class Isa { kScalar, kAvx2 };

template <class T>
struct KernelTable {
  Isa isa;
  /// c(m,n) += a(m,k) * b(k,n)
  void (*gemm_nn)(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c);
  /// c(m,n) += a(k,m)^T * b(k,n)
  void (*gemm_tn)(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c);
  void (*add)(std::size_t n, const T* a, const T* b, T* out);
  void (*sub)(std::size_t n, const T* a, const T* b, T* out);
  void (*mul)(std::size_t n, const T* a, const T* b, T* out);
  /// y += alpha * x
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
  /// y = alpha * x
  void (*scale)(std::size_t n, T alpha, const T* x, T* y);
  /// y = x > 0 ? x : 0
  void (*relu)(std::size_t n, const T* x, T* y);
  /// gx += x > 0 ? gy : 0
  void (*relu_backward)(std::size_t n, const T* x, const T* gy, T* gx);
};

/// Kernels of the currently selected ISA.
template <class T>
const KernelTable<T>& active();

/// Kernels of a specific ISA; throws UsageError if it is unavailable.
template <class T>
const KernelTable<T>& table(Isa isa);

bool available(Isa isa);
Isa best_available();
Isa active_isa();

/// Override the runtime choice (tests pin the scalar path this way). The
/// MODKIT_ISA environment variable (scalar|avx2) sets the initial choice.
void set_active_isa(Isa isa);

std::string_view isa_name(Isa isa);

/// Scope guard for tests.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_active_isa(isa); }
  ~ScopedIsa() { set_active_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

namespace scalar {
template <class T>
const KernelTable<T>& table();
}

namespace avx2 {
bool compiled();
template <class T>
const KernelTable<T>& table();
}  // namespace avx2

}  // namespace modkit::kernels
