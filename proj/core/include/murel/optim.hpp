#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "murel/tensor.hpp"

namespace murel {

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update over `params`, then zeroes their gradients.
///
/// Coordinates whose gradient is exactly zero are skipped (moments and value
/// untouched), so a zero gradient leaves parameters fixed whatever the state.
/// Throws StateError if a parameter has no gradient buffer.
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace murel
