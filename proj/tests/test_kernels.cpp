#include <random>
#include <vector>

#include "doctest.h"
#include "transsleep/kernels.hpp"

using namespace transsleep::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

void check_equivalent(const KernelTable& simd) {
  const KernelTable& ref = scalar_table();
  std::mt19937_64 rng(1234);
  // Lengths straddle every vector-width tail.
  for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 7u, 8u, 9u, 15u, 16u, 17u, 31u, 200u, 1023u}) {
    const auto a = random_vec(n, rng);
    const auto b = random_vec(n, rng);
    CHECK(simd.dot(a.data(), b.data(), n) == doctest::Approx(ref.dot(a.data(), b.data(), n)).epsilon(1e-12));
    CHECK(simd.sum(a.data(), n) == doctest::Approx(ref.sum(a.data(), n)).epsilon(1e-12));

    auto y1 = b, y2 = b;
    ref.axpy(y1.data(), 0.75, a.data(), n);
    simd.axpy(y2.data(), 0.75, a.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y2[i] == doctest::Approx(y1[i]).epsilon(1e-14));

    y1 = b;
    y2 = b;
    ref.add_inplace(y1.data(), a.data(), n);
    simd.add_inplace(y2.data(), a.data(), n);
    CHECK(y1 == y2);

    std::vector<double> z1(n), z2(n);
    ref.mul(z1.data(), a.data(), b.data(), n);
    simd.mul(z2.data(), a.data(), b.data(), n);
    CHECK(z1 == z2);
  }
}

}  // namespace

TEST_CASE("scalar reference kernels compute the textbook values") {
  const KernelTable& k = scalar_table();
  const double a[] = {1, 2, 3, 4, 5};
  const double b[] = {5, 4, 3, 2, 1};
  CHECK(k.dot(a, b, 5) == 35.0);
  CHECK(k.sum(a, 5) == 15.0);
  double y[] = {1, 1, 1, 1, 1};
  k.axpy(y, 2.0, a, 5);
  CHECK(y[4] == 11.0);
}

TEST_CASE("AVX2 kernels match the scalar reference") {
  const KernelTable* t = avx2_table();
  if (t == nullptr) {
    MESSAGE("AVX2 not available on this CPU; skipped");
    return;
  }
  check_equivalent(*t);
}

TEST_CASE("NEON kernels match the scalar reference") {
  const KernelTable* t = neon_table();
  if (t == nullptr) {
    MESSAGE("NEON not compiled for this target; skipped");
    return;
  }
  check_equivalent(*t);
}

TEST_CASE("active table can be forced to scalar and restored") {
  set_active(&scalar_table());
  CHECK(active().name == "scalar");
  set_active(nullptr);
  CHECK(!active().name.empty());
}
