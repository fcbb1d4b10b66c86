#pragma once

#include <cmath>
#include <cstdint>

#include "ldo/error.hpp"
#include "ldo/tensor.hpp"

namespace ldo {

struct AdamState {
  std::uint64_t step = 0;
  Tensor first_moment;
  Tensor second_moment;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;

  AdamState() = default;
  AdamState(const Shape& shape, double lr) : first_moment(shape), second_moment(shape), learning_rate(lr) {}
};

/// One bias-corrected ADAM update applied in place.
inline void adam_update(Tensor& param, const Tensor& grad, AdamState& state) {
  if (param.shape != grad.shape) {
    throw dimension_error("adam: parameter " + shape_string(param.shape) + " vs gradient " +
                          shape_string(grad.shape));
  }
  if (state.first_moment.shape != param.shape) state.first_moment = Tensor(param.shape);
  if (state.second_moment.shape != param.shape) state.second_moment = Tensor(param.shape);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const double step_size = state.learning_rate / correction1;
  const float b1 = static_cast<float>(state.beta1);
  const float b2 = static_cast<float>(state.beta2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    float& m = state.first_moment[i];
    float& v = state.second_moment[i];
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g * g;
    const double denom = std::sqrt(static_cast<double>(v) / correction2) + state.epsilon;
    param[i] -= static_cast<float>(step_size * m / denom);
  }
}

/// Value-returning form of adam_update.
inline Tensor adam_step(Tensor param, const Tensor& grad, AdamState& state) {
  adam_update(param, grad, state);
  return param;
}

}  // namespace ldo
