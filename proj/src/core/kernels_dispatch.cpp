// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "shiftlab/kernels.hpp"

namespace shiftlab::kernels {

#ifdef SHIFTLAB_HAVE_AVX2_TU
const KernelTable *avx2_table_impl() noexcept;
#endif

const KernelTable *avx2_table() noexcept {
#ifdef SHIFTLAB_HAVE_AVX2_TU
  return avx2_table_impl();
#else
  return nullptr;
#endif
}

bool cpu_has_avx2() noexcept {
#if defined(SHIFTLAB_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const KernelTable *initial_table() noexcept {
  if (const char *env = std::getenv("SHIFTLAB_KERNELS");
      env != nullptr && std::string(env) == "scalar")
    return &scalar_table();
  if (cpu_has_avx2() && avx2_table() != nullptr)
    return avx2_table();
  return &scalar_table();
}

std::atomic<const KernelTable *> &current() noexcept {
  static std::atomic<const KernelTable *> table{initial_table()};
  return table;
}

} // namespace

const KernelTable &active() noexcept {
  return *current().load(std::memory_order_acquire);
}

void select(Backend backend) {
  if (backend == Backend::scalar) {
    current().store(&scalar_table(), std::memory_order_release);
    return;
  }
  if (!cpu_has_avx2() || avx2_table() == nullptr)
    throw std::invalid_argument("avx2 kernels unavailable on this CPU");
  current().store(avx2_table(), std::memory_order_release);
}

std::string_view backend_name(Backend backend) noexcept {
  return backend == Backend::scalar ? "scalar" : "avx2";
}

} // namespace shiftlab::kernels
