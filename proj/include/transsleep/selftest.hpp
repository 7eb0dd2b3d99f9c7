#pragma once
// Built-in verification suites shared by `transsleep selftest` and the
// acceptance runner.

#include <cstdint>
#include <string>
#include <vector>

namespace transsleep::selftest {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Finite-difference checks in f64: every tensor primitive and layer at
// relative error < 1e-4, and the full training loss on a two-sequence toy
// batch at < 1e-3.
std::vector<Check> gradient_suite(std::uint64_t seed = 0);
std::vector<Check> layer_gradient_checks(std::uint64_t seed = 0);
Check full_loss_gradient_check(std::uint64_t seed = 0);

// Shapes of the default model, transition labels against brute force,
// metrics against a brute-force oracle, checkpoint round trip, kernel
// dispatch equivalence.
std::vector<Check> invariant_suite(std::uint64_t seed = 0);
Check shape_check();
Check transition_label_check(std::uint64_t seed, std::size_t trials);
Check metric_oracle_check(std::uint64_t seed, std::size_t trials);

}  // namespace transsleep::selftest
