#pragma once
// Data-parallel inner loops used by the tensor engine.
//
// Every kernel has a scalar reference implementation plus SIMD variants
// (AVX2+FMA on x86-64, NEON on aarch64). The active table is chosen once at
// startup from the CPU feature bits; TRANSSLEEP_KERNELS=scalar forces the
// reference path. Results of different variants agree to rounding, not
// bit-for-bit (FMA and lane reassociation), so determinism holds per variant.

#include <cstddef>
#include <string_view>

namespace transsleep::kernels {

struct KernelTable {
  std::string_view name;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double* y, double alpha, const double* x, std::size_t n);
  // y[i] += x[i]
  void (*add_inplace)(double* y, const double* x, std::size_t n);
  // z[i] = x[i] * y[i]
  void (*mul)(double* z, const double* x, const double* y, std::size_t n);
  // sum_i x[i]
  double (*sum)(const double* x, std::size_t n);
};

const KernelTable& scalar_table();
// nullptr when the variant was not compiled in or the CPU lacks support.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// Table used by the engine.
const KernelTable& active();
// Override the active table (tests); pass nullptr to restore auto-detection.
void set_active(const KernelTable* table);

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double* y, double alpha, const double* x, std::size_t n) { active().axpy(y, alpha, x, n); }
inline void add_inplace(double* y, const double* x, std::size_t n) { active().add_inplace(y, x, n); }
inline void mul(double* z, const double* x, const double* y, std::size_t n) { active().mul(z, x, y, n); }
inline double sum(const double* x, std::size_t n) { return active().sum(x, n); }

}  // namespace transsleep::kernels
