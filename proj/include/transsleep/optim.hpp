#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "transsleep/nn.hpp"

namespace transsleep::optim {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Ridge term added to the gradient before the moment update.
  double weight_decay = 1e-3;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

// One bias-corrected Adam update of the named parameters (all of them when
// `names` is empty). Throws std::invalid_argument naming the first parameter
// that has no accumulated gradient.
void adam_step(nn::ModelParams& params, AdamState& state, const std::vector<std::string>& names = {});

}  // namespace transsleep::optim
