#include "test_util.hpp"

#include "transsleep/ops.hpp"

namespace testutil {

Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Tensor w = random_tensor(y.shape(), rng, false, 0.5, 1.5);
  return transsleep::ops::sum(transsleep::ops::mul(y, w));
}

}  // namespace testutil
