#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "murel/params.hpp"
#include "murel/tensor.hpp"

namespace murel {

enum class Activation { tanh, linear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Sizes of one factored bilinear fusion a (x) b -> out.
struct FusionConfig {
  std::size_t input_a = 0;
  std::size_t input_b = 0;
  std::size_t output = 0;
  std::size_t proj_a = 0;  // t_a
  std::size_t proj_b = 0;  // t_b
  std::size_t hidden = 0;  // d_h
  std::size_t rank = 5;    // R
  Activation activation = Activation::tanh;

  /// t_a = t_b = d_h = min(2 * output, 64), R = 5, tanh.
  static FusionConfig defaults(std::size_t input_a, std::size_t input_b, std::size_t output);
  /// Same sizes with an explicit width for t_a = t_b = d_h.
  static FusionConfig with_width(std::size_t input_a, std::size_t input_b, std::size_t output, std::size_t width,
                                 std::size_t rank = 5, Activation activation = Activation::tanh);

  /// d_a*t_a + d_b*t_b + R*(t_a+t_b)*d_h + d_h*d_out (+ t_a + t_b + d_out biases in tanh mode).
  std::size_t parameter_count() const;
  void validate() const;
};

/// Rank-constrained Tucker fusion:
///   a' = act(a W_a + b_a),  b' = act(b W_b + b_b),
///   h  = sum_r (a' A_r) o (b' B_r),  out = h P + b_out.
/// The R factor matrices A_r (t_a x d_h) are stored side by side in `factors_a`
/// (t_a x R*d_h); likewise `factors_b`. Linear mode has no biases and identity
/// activations, making the map exactly bilinear.
class Fusion {
 public:
  Fusion() = default;
  Fusion(FusionConfig config, Rng& rng);

  const FusionConfig& config() const { return config_; }

  /// a: [G*group x d_a], b: [G x d_b] (or [1 x d_b], broadcast) -> [G*group x d_out].
  Tensor fuse_rows(const Tensor& a, const Tensor& b, std::size_t group = 1) const;

  /// a, b: [G*group x d] -> [G*group*group x d_out]; row (g, i, j) = fuse(a[g,i], b[g,j]).
  Tensor fuse_pairs(const Tensor& a, const Tensor& b, std::size_t group) const;

  void register_params(ParamStore& store, const std::string& prefix) const;
  std::size_t parameter_count() const { return config_.parameter_count(); }

  /// A_r as a t_a x d_h matrix copy.
  Tensor factor_a(std::size_t r) const;
  Tensor factor_b(std::size_t r) const;

  Tensor proj_a, bias_a, proj_b, bias_b;
  Tensor factors_a, factors_b;
  Tensor out, bias_out;

 private:
  Tensor project_a(const Tensor& a) const;
  Tensor project_b(const Tensor& b) const;

  FusionConfig config_;
};

/// fuse(a, b; theta) for single vectors.
Tensor fuse(const Tensor& a, const Tensor& b, const Fusion& theta);

/// Row i equals fuse(rows[i], b).
Tensor batch_fuse(const Tensor& rows, const Tensor& b, const Fusion& theta);

/// Full third-order tensor w[s, q, m] of a linear-mode fusion.
struct DenseBilinear {
  static constexpr std::size_t kMaxEntries = 1'000'000;

  std::size_t input_a = 0;
  std::size_t input_b = 0;
  std::size_t output = 0;
  std::vector<double> weights;  // index (s * input_b + q) * output + m

  double at(std::size_t s, std::size_t q, std::size_t m) const { return weights[(s * input_b + q) * output + m]; }
  /// out[m] = sum_{s,q} w[s,q,m] a[s] b[q]
  std::vector<double> contract(std::span<const double> a, std::span<const double> b) const;
};

/// Assembles w[s,q,m] = sum_r sum_h (W_a A_r)[s,h] (W_b B_r)[q,h] P[h,m] by explicit loops.
/// Throws ContractError in tanh mode and DomainError beyond the size guard.
DenseBilinear materialize_dense(const Fusion& theta);

}  // namespace murel
