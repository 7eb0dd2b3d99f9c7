#include "transsleep/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace transsleep {

GradCheckResult grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double h,
                           std::size_t max_per_tensor, std::uint64_t seed) {
  for (Tensor t : inputs) t.zero_grad();
  const Tensor out = fn();
  if (out.numel() != 1) throw ShapeError("grad_check: function output must be scalar, got " + shape_str(out.shape()));
  out.backward();

  std::mt19937_64 rng(seed);
  GradCheckResult result;
  for (Tensor t : inputs) {
    const std::vector<double> analytic = t.grad();
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_per_tensor > 0 && coords.size() > max_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_per_tensor);
    }
    auto values = t.mutable_data();
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + h;
      const double plus = fn().item();
      values[i] = saved - h;
      const double minus = fn().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      result.max_relative_error = std::max(result.max_relative_error, std::abs(analytic[i] - numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& input, double h) {
  Tensor x = input;
  x.set_requires_grad(true);
  return grad_check([&] { return fn(x); }, {x}, h).max_relative_error;
}

}  // namespace transsleep
