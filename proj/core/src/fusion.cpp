#include "murel/fusion.hpp"

#include <algorithm>

#include "murel/errors.hpp"
#include "murel/ops.hpp"

namespace murel {

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "linear"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "linear") return Activation::linear;
  throw DataError("unknown activation '" + s + "' (expected tanh or linear)");
}

FusionConfig FusionConfig::defaults(std::size_t input_a, std::size_t input_b, std::size_t output) {
  return with_width(input_a, input_b, output, std::min<std::size_t>(2 * output, 64));
}

FusionConfig FusionConfig::with_width(std::size_t input_a, std::size_t input_b, std::size_t output, std::size_t width,
                                      std::size_t rank, Activation activation) {
  FusionConfig c;
  c.input_a = input_a;
  c.input_b = input_b;
  c.output = output;
  c.proj_a = c.proj_b = c.hidden = width;
  c.rank = rank;
  c.activation = activation;
  return c;
}

std::size_t FusionConfig::parameter_count() const {
  std::size_t n = input_a * proj_a + input_b * proj_b + rank * (proj_a + proj_b) * hidden + hidden * output;
  if (activation == Activation::tanh) n += proj_a + proj_b + output;
  return n;
}

void FusionConfig::validate() const {
  if (input_a == 0 || input_b == 0 || output == 0 || proj_a == 0 || proj_b == 0 || hidden == 0 || rank == 0) {
    throw DataError("fusion config has a zero dimension");
  }
}

Fusion::Fusion(FusionConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const auto& c = config_;
  proj_a = glorot(c.input_a, c.proj_a, rng);
  proj_b = glorot(c.input_b, c.proj_b, rng);
  factors_a = glorot(c.proj_a, c.rank * c.hidden, rng);
  factors_b = glorot(c.proj_b, c.rank * c.hidden, rng);
  out = glorot(c.hidden, c.output, rng);
  if (c.activation == Activation::tanh) {
    bias_a = Tensor::zeros({c.proj_a}, true);
    bias_b = Tensor::zeros({c.proj_b}, true);
    bias_out = Tensor::zeros({c.output}, true);
  }
}

Tensor Fusion::project_a(const Tensor& a) const {
  if (a.rank() != 2 || a.cols() != config_.input_a) {
    throw DimensionError("fusion: left input has shape " + shape_str(a.shape()) + ", expected [n x " +
                         std::to_string(config_.input_a) + "]");
  }
  Tensor t = matmul(a, proj_a);
  if (config_.activation == Activation::tanh) t = murel::tanh(add(t, bias_a));
  return matmul(t, factors_a);
}

Tensor Fusion::project_b(const Tensor& b) const {
  if (b.rank() != 2 || b.cols() != config_.input_b) {
    throw DimensionError("fusion: right input has shape " + shape_str(b.shape()) + ", expected [n x " +
                         std::to_string(config_.input_b) + "]");
  }
  Tensor t = matmul(b, proj_b);
  if (config_.activation == Activation::tanh) t = murel::tanh(add(t, bias_b));
  return matmul(t, factors_b);
}

Tensor Fusion::fuse_rows(const Tensor& a, const Tensor& b, std::size_t group) const {
  Tensor u = project_a(a);
  Tensor w = project_b(b);
  if (w.rows() != u.rows() && w.rows() != 1) {
    if (group == 0 || w.rows() * group != u.rows()) {
      throw DimensionError("fusion: " + std::to_string(b.rows()) + " right rows cannot pair with " +
                           std::to_string(a.rows()) + " left rows in groups of " + std::to_string(group));
    }
    w = repeat_rows(w, group);
  }
  Tensor h = rank_product(u, w, config_.rank);
  Tensor y = matmul(h, out);
  if (config_.activation == Activation::tanh) y = add(y, bias_out);
  return y;
}

Tensor Fusion::fuse_pairs(const Tensor& a, const Tensor& b, std::size_t group) const {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows()) {
    throw DimensionError("fusion: pair inputs " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " must have equal row counts");
  }
  Tensor h = pairwise_rank_product(project_a(a), project_b(b), config_.rank, group);
  Tensor y = matmul(h, out);
  if (config_.activation == Activation::tanh) y = add(y, bias_out);
  return y;
}

void Fusion::register_params(ParamStore& store, const std::string& prefix) const {
  store.add(prefix + ".W_a", proj_a);
  if (bias_a.defined()) store.add(prefix + ".b_a", bias_a);
  store.add(prefix + ".W_b", proj_b);
  if (bias_b.defined()) store.add(prefix + ".b_b", bias_b);
  store.add(prefix + ".A", factors_a);
  store.add(prefix + ".B", factors_b);
  store.add(prefix + ".P", out);
  if (bias_out.defined()) store.add(prefix + ".b_out", bias_out);
}

static Tensor factor_slice(const Tensor& packed, std::size_t rows, std::size_t hidden, std::size_t rank, std::size_t r) {
  if (r >= rank) throw IndexError("factor index " + std::to_string(r) + " >= rank " + std::to_string(rank));
  std::vector<double> v(rows * hidden);
  auto src = packed.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t h = 0; h < hidden; ++h) v[i * hidden + h] = src[i * rank * hidden + r * hidden + h];
  return Tensor({rows, hidden}, std::move(v));
}

Tensor Fusion::factor_a(std::size_t r) const {
  return factor_slice(factors_a, config_.proj_a, config_.hidden, config_.rank, r);
}

Tensor Fusion::factor_b(std::size_t r) const {
  return factor_slice(factors_b, config_.proj_b, config_.hidden, config_.rank, r);
}

Tensor fuse(const Tensor& a, const Tensor& b, const Fusion& theta) {
  if (a.rank() != 1 || b.rank() != 1) {
    throw DimensionError("fuse: expected vectors, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Tensor y = theta.fuse_rows(reshape(a, {1, a.size()}), reshape(b, {1, b.size()}));
  return reshape(y, {y.size()});
}

Tensor batch_fuse(const Tensor& rows, const Tensor& b, const Fusion& theta) {
  if (b.rank() != 1) throw DimensionError("batch_fuse: right input must be a vector, got " + shape_str(b.shape()));
  return theta.fuse_rows(rows, reshape(b, {1, b.size()}), rows.rank() == 2 ? rows.rows() : 1);
}

std::vector<double> DenseBilinear::contract(std::span<const double> a, std::span<const double> b) const {
  if (a.size() != input_a || b.size() != input_b) throw DimensionError("dense contraction: input size mismatch");
  std::vector<double> y(output, 0.0);
  for (std::size_t s = 0; s < input_a; ++s)
    for (std::size_t q = 0; q < input_b; ++q)
      for (std::size_t m = 0; m < output; ++m) y[m] += at(s, q, m) * a[s] * b[q];
  return y;
}

DenseBilinear materialize_dense(const Fusion& theta) {
  const auto& c = theta.config();
  if (c.activation != Activation::linear) {
    throw ContractError("materialize_dense: a tanh-mode fusion has no dense bilinear form");
  }
  if (c.input_a * c.input_b * c.output > DenseBilinear::kMaxEntries) {
    throw DomainError("materialize_dense: " + std::to_string(c.input_a * c.input_b * c.output) +
                      " entries exceed the desk-scale limit");
  }
  DenseBilinear dense{c.input_a, c.input_b, c.output, std::vector<double>(c.input_a * c.input_b * c.output, 0.0)};
  auto wa = theta.proj_a.data();
  auto wb = theta.proj_b.data();
  auto fa = theta.factors_a.data();
  auto fb = theta.factors_b.data();
  auto p = theta.out.data();
  const std::size_t width = c.rank * c.hidden;
  for (std::size_t r = 0; r < c.rank; ++r) {
    // left[s][h] = (W_a A_r)[s,h], right[q][h] = (W_b B_r)[q,h]
    std::vector<double> left(c.input_a * c.hidden, 0.0), right(c.input_b * c.hidden, 0.0);
    for (std::size_t s = 0; s < c.input_a; ++s)
      for (std::size_t h = 0; h < c.hidden; ++h)
        for (std::size_t t = 0; t < c.proj_a; ++t)
          left[s * c.hidden + h] += wa[s * c.proj_a + t] * fa[t * width + r * c.hidden + h];
    for (std::size_t q = 0; q < c.input_b; ++q)
      for (std::size_t h = 0; h < c.hidden; ++h)
        for (std::size_t t = 0; t < c.proj_b; ++t)
          right[q * c.hidden + h] += wb[q * c.proj_b + t] * fb[t * width + r * c.hidden + h];
    for (std::size_t s = 0; s < c.input_a; ++s)
      for (std::size_t q = 0; q < c.input_b; ++q)
        for (std::size_t m = 0; m < c.output; ++m) {
          double acc = 0.0;
          for (std::size_t h = 0; h < c.hidden; ++h)
            acc += left[s * c.hidden + h] * right[q * c.hidden + h] * p[h * c.output + m];
          dense.weights[(s * c.input_b + q) * c.output + m] += acc;
        }
  }
  return dense;
}

}  // namespace murel
