#include "murel/optim.hpp"

#include <cmath>

#include "murel/errors.hpp"

namespace murel {

void adam_step(std::span<Tensor> params, AdamState& state) {
  for (const auto& p : params) {
    if (!p.has_grad()) {
      throw StateError("adam_step: parameter '" + p.label() + "' " + shape_str(p.shape()) + " has no gradient");
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw StateError("adam_step: state tracks " + std::to_string(state.first_moment.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.size()) {
      throw StateError("adam_step: moment size mismatch for parameter '" + p.label() + "'");
    }
    auto w = p.mutable_data();
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      if (gi == 0.0) continue;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / correction1;
      const double vhat = v[i] / correction2;
      w[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    p.zero_grad();
  }
}

}  // namespace murel
