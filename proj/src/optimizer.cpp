#include "mixcl/optimizer.hpp"

#include <cmath>
#include <stdexcept>

#include "mixcl/common.hpp"

namespace mixcl {

AdamState::AdamState(const NamedTensors& params, double lr_) : lr(lr_) {
  slots.reserve(params.size());
  for (const auto& [name, tensor] : params) {
    Slot s;
    s.name = name;
    s.param = tensor;
    s.m.assign(tensor.values().size(), 0.0);
    s.v.assign(tensor.values().size(), 0.0);
    slots.push_back(std::move(s));
  }
}

void adam_step(AdamState& state) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (AdamState::Slot& s : state.slots) {
    if (!s.param.has_grad())
      throw std::logic_error("adam_step: no gradient for parameter '" +
                             s.name + "'");
    std::vector<double>& g = s.param.grad();
    std::vector<double>& p = s.param.values();
    if (g.size() != p.size())
      throw std::invalid_argument("adam_step: gradient size mismatch for '" +
                                  s.name + "'");
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw NumericError("non-finite gradient in parameter '" + s.name +
                           "' at step " + std::to_string(state.t));
      s.m[i] = state.beta1 * s.m[i] + (1.0 - state.beta1) * g[i];
      s.v[i] = state.beta2 * s.v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = s.m[i] / bc1;
      const double v_hat = s.v[i] / bc2;
      p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    s.param.zero_grad();
  }
}

void check_finite(const NamedTensors& params, std::int64_t step_index) {
  for (const auto& [name, tensor] : params) {
    if (!tensor.has_grad()) continue;
    for (double g : tensor.grad())
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter '" + name +
                           "' at step " + std::to_string(step_index));
  }
}

}  // namespace mixcl
