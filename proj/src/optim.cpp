#include "transsleep/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace transsleep::optim {

void adam_step(nn::ModelParams& params, AdamState& state, const std::vector<std::string>& names) {
  std::vector<std::string> selected = names;
  if (selected.empty()) {
    for (const auto& [name, t] : params.params()) selected.push_back(name);
  }
  for (const std::string& name : selected) {
    if (!params.get(name).has_grad()) throw std::invalid_argument("adam_step: parameter '" + name + "' has no gradient");
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (const std::string& name : selected) {
    Tensor p = params.get(name);
    const std::vector<double> g = p.grad();
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double grad = g[i] + c.weight_decay * values[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad * grad;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace transsleep::optim
