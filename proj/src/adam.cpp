#include <cmath>
#include <string>

#include "fcnstoi/error.hpp"
#include "fcnstoi/fcn.hpp"

namespace fcnstoi::fcn {

void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state,
                 double lr) {
  if (params.size() != grads.size()) {
    throw Error(ErrorCode::kInvalidArgument, "adam: parameter/gradient size mismatch");
  }
  if (!(lr >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "adam: learning rate must be >= 0");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorCode::kInvalidArgument, "adam: state shape does not mirror parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw Error(ErrorCode::kNonFiniteGradient,
                  "adam: gradient entry " + std::to_string(i) + " is not finite");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

}  // namespace fcnstoi::fcn
