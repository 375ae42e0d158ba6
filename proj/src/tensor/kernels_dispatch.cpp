// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <string>

#include "modkit/errors.hpp"
#include "modkit/tensor/kernels.hpp"

namespace modkit::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa initial_isa() {
  const Isa best = best_available();
  if (const char* env = std::getenv("MODKIT_ISA")) {
    const std::string v = env;
    if (v == "scalar") return Isa::kScalar;
    if (v == "avx2" && available(Isa::kAvx2)) return Isa::kAvx2;
  }
  return best;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

bool available(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2: {
      static const bool ok = avx2::compiled() && cpu_has_avx2();
      return ok;
    }
  }
  return false;
}

Isa best_available() { return available(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar; }

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!available(isa)) throw UsageError("ISA " + std::string(isa_name(isa)) + " is not available");
  current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

template <class T>
const KernelTable<T>& table(Isa isa) {
  if (!available(isa)) throw UsageError("ISA " + std::string(isa_name(isa)) + " is not available");
  return isa == Isa::kAvx2 ? avx2::table<T>() : scalar::table<T>();
}

template <class T>
const KernelTable<T>& active() {
  return active_isa() == Isa::kAvx2 ? avx2::table<T>() : scalar::table<T>();
}

template const KernelTable<float>& table<float>(Isa);
template const KernelTable<double>& table<double>(Isa);
template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();

}  // namespace modkit::kernels
