#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "murel/tensor.hpp"

namespace murel {

struct GradcheckEntry {
  std::string name;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::vector<GradcheckEntry> per_input;
};

/// Compares tape gradients of the scalar `f()` against central differences
/// (f(x+eps) - f(x-eps)) / 2eps for every coordinate of every input.
///
/// `f` must read the current values of `inputs` on each call. The error per
/// coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
GradcheckReport gradcheck(const std::function<Tensor()>& f, std::span<Tensor> inputs, double eps, double tol);

}  // namespace murel
