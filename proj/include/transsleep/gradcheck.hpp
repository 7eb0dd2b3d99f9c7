#pragma once
// Finite-difference verification of reverse-mode gradients.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "transsleep/tensor.hpp"

namespace transsleep {

using ScalarFn = std::function<Tensor()>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

// Compares d fn / d inputs from backward() against central differences
// (f(x+h) - f(x-h)) / 2h. Relative error per element is
// |a - b| / max(|a|, |b|, 1e-8). fn must rebuild its graph from the current
// values of `inputs` on every call and return a single-element tensor.
// When max_per_tensor > 0 only that many randomly chosen coordinates of each
// input are perturbed.
GradCheckResult grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double h = 1e-5,
                           std::size_t max_per_tensor = 0, std::uint64_t seed = 0);

// Single-input convenience form.
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& input, double h = 1e-5);

}  // namespace transsleep
