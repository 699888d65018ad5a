#include "murel/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "murel/errors.hpp"

namespace murel {

GradcheckReport gradcheck(const std::function<Tensor()>& f, std::span<Tensor> inputs, double eps, double tol) {
  std::vector<bool> saved_flags;
  for (auto& in : inputs) {
    saved_flags.push_back(in.requires_grad());
    in.set_requires_grad(true);
    in.drop_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = f();
    if (out.size() != 1) throw ContractError("gradcheck: function output has shape " + shape_str(out.shape()));
    tape.backward(out);
  }
  for (auto& in : inputs) {
    if (in.has_grad()) {
      analytic.emplace_back(in.grad().begin(), in.grad().end());
    } else {
      analytic.emplace_back(in.size(), 0.0);
    }
    in.drop_grad();
  }

  GradcheckReport report;
  report.tolerance = tol;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& in = inputs[k];
    GradcheckEntry entry{in.label().empty() ? "input" + std::to_string(k) : in.label(), in.size(), 0.0};
    auto x = in.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + eps;
      const double plus = f().item();
      x[i] = orig - eps;
      const double minus = f().item();
      x[i] = orig;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      entry.max_rel_error = std::max(entry.max_rel_error, err);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_input.push_back(std::move(entry));
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) inputs[k].set_requires_grad(saved_flags[k]);
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace murel
