// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>

namespace shiftlab::kernels {

enum class Backend { scalar, avx2 };

/// Function table for one instruction-set variant. Every variant must agree
/// with the scalar table to within floating-point reassociation error.
struct KernelTable {
  Backend backend;
  const char *name;
  double (*dot)(const double *a, const double *b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double *x, double *y, std::size_t n);
};

const KernelTable &scalar_table() noexcept;

/// nullptr when the AVX2 translation unit was not built for this target.
const KernelTable *avx2_table() noexcept;

/// True when the running CPU reports AVX2 and FMA.
bool cpu_has_avx2() noexcept;

/// The table used by the matrix routines. Chosen once on first use:
/// AVX2 when available, unless SHIFTLAB_KERNELS=scalar is set.
const KernelTable &active() noexcept;

/// Overrides the active table. Throws std::invalid_argument if the backend
/// is unavailable on this CPU.
void select(Backend backend);

std::string_view backend_name(Backend backend) noexcept;

inline double dot(const double *a, const double *b, std::size_t n) {
  return active().dot(a, b, n);
}

inline void axpy(double alpha, const double *x, double *y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}

} // namespace shiftlab::kernels
