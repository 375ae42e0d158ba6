// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0
//
// AVX2 variants. Compiled with -mavx2 (never -mfma): mul then add per lane is
// what keeps these bit-identical to the scalar loops.

#include "modkit/tensor/kernels.hpp"

#include "modkit/errors.hpp"

#if defined(__x86_64__) && defined(__AVX2__)
#include <immintrin.h>
#define MODKIT_HAVE_AVX2 1
#else
#define MODKIT_HAVE_AVX2 0
#endif

namespace modkit::kernels::avx2 {

#if MODKIT_HAVE_AVX2
namespace {

template <class T>
struct Packet;

template <>
struct Packet<float> {
  using V = __m256;
  static constexpr std::size_t kLanes = 8;
  static V load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, V v) { _mm256_storeu_ps(p, v); }
  static V set1(float v) { return _mm256_set1_ps(v); }
  static V zero() { return _mm256_setzero_ps(); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static V sub(V a, V b) { return _mm256_sub_ps(a, b); }
  static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
  static V gt_zero_mask(V a) { return _mm256_cmp_ps(a, _mm256_setzero_ps(), _CMP_GT_OQ); }
  static V band(V a, V b) { return _mm256_and_ps(a, b); }
};

template <>
struct Packet<double> {
  using V = __m256d;
  static constexpr std::size_t kLanes = 4;
  static V load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, V v) { _mm256_storeu_pd(p, v); }
  static V set1(double v) { return _mm256_set1_pd(v); }
  static V zero() { return _mm256_setzero_pd(); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static V sub(V a, V b) { return _mm256_sub_pd(a, b); }
  static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
  static V gt_zero_mask(V a) { return _mm256_cmp_pd(a, _mm256_setzero_pd(), _CMP_GT_OQ); }
  static V band(V a, V b) { return _mm256_and_pd(a, b); }
};

// crow[j] += av * brow[j] for j in [0, n)
template <class T>
inline void row_axpy(std::size_t n, T av, const T* brow, T* crow) {
  using P = Packet<T>;
  const auto va = P::set1(av);
  std::size_t j = 0;
  for (; j + P::kLanes <= n; j += P::kLanes) {
    P::store(crow + j, P::add(P::load(crow + j), P::mul(va, P::load(brow + j))));
  }
  for (; j < n; ++j) crow[j] = crow[j] + av * brow[j];
}

template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) row_axpy(n, a[i * k + p], b + p * n, crow);
  }
}

template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) row_axpy(n, a[p * m + i], brow, c + i * n);
  }
}

template <class T, class VecOp, class ScalarOp>
inline void binary(std::size_t n, const T* a, const T* b, T* out, VecOp vop, ScalarOp sop) {
  using P = Packet<T>;
  std::size_t i = 0;
  for (; i + P::kLanes <= n; i += P::kLanes) P::store(out + i, vop(P::load(a + i), P::load(b + i)));
  for (; i < n; ++i) out[i] = sop(a[i], b[i]);
}

template <class T>
void add(std::size_t n, const T* a, const T* b, T* out) {
  using P = Packet<T>;
  binary(n, a, b, out, [](auto x, auto y) { return P::add(x, y); }, [](T x, T y) { return x + y; });
}

template <class T>
void sub(std::size_t n, const T* a, const T* b, T* out) {
  using P = Packet<T>;
  binary(n, a, b, out, [](auto x, auto y) { return P::sub(x, y); }, [](T x, T y) { return x - y; });
}

template <class T>
void mul(std::size_t n, const T* a, const T* b, T* out) {
  using P = Packet<T>;
  binary(n, a, b, out, [](auto x, auto y) { return P::mul(x, y); }, [](T x, T y) { return x * y; });
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  row_axpy(n, alpha, x, y);
}

template <class T>
void scale(std::size_t n, T alpha, const T* x, T* y) {
  using P = Packet<T>;
  const auto va = P::set1(alpha);
  std::size_t i = 0;
  for (; i + P::kLanes <= n; i += P::kLanes) P::store(y + i, P::mul(va, P::load(x + i)));
  for (; i < n; ++i) y[i] = alpha * x[i];
}

template <class T>
void relu(std::size_t n, const T* x, T* y) {
  using P = Packet<T>;
  std::size_t i = 0;
  for (; i + P::kLanes <= n; i += P::kLanes) {
    const auto v = P::load(x + i);
    P::store(y + i, P::band(v, P::gt_zero_mask(v)));
  }
  for (; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_backward(std::size_t n, const T* x, const T* gy, T* gx) {
  using P = Packet<T>;
  std::size_t i = 0;
  for (; i + P::kLanes <= n; i += P::kLanes) {
    const auto pass = P::band(P::load(gy + i), P::gt_zero_mask(P::load(x + i)));
    P::store(gx + i, P::add(P::load(gx + i), pass));
  }
  for (; i < n; ++i) gx[i] = gx[i] + (x[i] > T(0) ? gy[i] : T(0));
}

template <class T>
constexpr KernelTable<T> make() {
  return KernelTable<T>{Isa::kAvx2, &gemm_nn<T>, &gemm_tn<T>, &add<T>,  &sub<T>,
                        &mul<T>,    &axpy<T>,    &scale<T>,   &relu<T>, &relu_backward<T>};
}

}  // namespace

bool compiled() { return true; }

template <class T>
const KernelTable<T>& table() {
  static constexpr KernelTable<T> kTable = make<T>();
  return kTable;
}

#else

bool compiled() { return false; }

template <class T>
const KernelTable<T>& table() {
  throw UsageError("AVX2 kernels were not compiled into this build");
}

#endif

template const KernelTable<float>& table<float>();
template const KernelTable<double>& table<double>();

}  // namespace modkit::kernels::avx2
