#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "murel/errors.hpp"
#include "murel/fusion.hpp"
#include "murel/gradcheck.hpp"
#include "murel/ops.hpp"

using namespace murel;

namespace {

Tensor random_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return Tensor::vector(std::move(v));
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return Tensor::matrix(r, c, std::move(v));
}

Fusion linear_fusion(std::size_t da, std::size_t db, std::size_t dout, std::size_t rank, std::uint64_t seed) {
  Rng rng(seed);
  return Fusion(FusionConfig::with_width(da, db, dout, 2 * dout, rank, Activation::linear), rng);
}

/// w[s][q][m] = sum_r sum_h (W_a A_r)[s,h] (W_b B_r)[q,h] P[h,m], written with scalar loops only.
std::vector<double> brute_dense(const Fusion& f) {
  const auto& c = f.config();
  const std::size_t width = c.rank * c.hidden;
  std::vector<double> w(c.input_a * c.input_b * c.output, 0.0);
  for (std::size_t s = 0; s < c.input_a; ++s)
    for (std::size_t q = 0; q < c.input_b; ++q)
      for (std::size_t m = 0; m < c.output; ++m) {
        double total = 0;
        for (std::size_t r = 0; r < c.rank; ++r)
          for (std::size_t h = 0; h < c.hidden; ++h) {
            double left = 0, right = 0;
            for (std::size_t t = 0; t < c.proj_a; ++t)
              left += f.proj_a[s * c.proj_a + t] * f.factors_a[t * width + r * c.hidden + h];
            for (std::size_t t = 0; t < c.proj_b; ++t)
              right += f.proj_b[q * c.proj_b + t] * f.factors_b[t * width + r * c.hidden + h];
            total += left * right * f.out[h * c.output + m];
          }
        w[(s * c.input_b + q) * c.output + m] = total;
      }
  return w;
}

std::vector<double> contract(const std::vector<double>& w, const Tensor& a, const Tensor& b, std::size_t dout) {
  std::vector<double> y(dout, 0.0);
  for (std::size_t s = 0; s < a.size(); ++s)
    for (std::size_t q = 0; q < b.size(); ++q)
      for (std::size_t m = 0; m < dout; ++m) y[m] += w[(s * b.size() + q) * dout + m] * a[s] * b[q];
  return y;
}

}  // namespace

TEST(FusionConfig, DefaultsAndParameterCount) {
  auto c = FusionConfig::defaults(32, 16, 32);
  EXPECT_EQ(c.proj_a, 64u);
  EXPECT_EQ(c.hidden, 64u);
  EXPECT_EQ(c.rank, 5u);
  auto small = FusionConfig::defaults(6, 4, 3);
  EXPECT_EQ(small.hidden, 6u);
  const std::size_t expected = 6 * 6 + 4 * 6 + 5 * (6 + 6) * 6 + 6 * 3 + (6 + 6 + 3);
  EXPECT_EQ(small.parameter_count(), expected);
  auto lin = FusionConfig::with_width(6, 4, 3, 6, 5, Activation::linear);
  EXPECT_EQ(lin.parameter_count(), expected - 15);
}

TEST(FusionConfig, RegisteredCountMatchesFormula) {
  for (auto act : {Activation::tanh, Activation::linear}) {
    Rng rng(0);
    Fusion f(FusionConfig::with_width(5, 3, 4, 7, 3, act), rng);
    ParamStore store;
    f.register_params(store, "f");
    EXPECT_EQ(store.parameter_count(), f.parameter_count());
  }
}

TEST(FusionConfig, ZeroDimensionRejected) {
  Rng rng(0);
  EXPECT_THROW(Fusion(FusionConfig::with_width(0, 3, 2, 4), rng), DataError);
}

TEST(Fusion, LinearZeroLeftGivesZero) {
  Fusion f = linear_fusion(3, 2, 2, 2, 1);
  Rng rng(2);
  for (int k = 0; k < 5; ++k) {
    Tensor y = fuse(Tensor::zeros({3}), random_vector(2, rng), f);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Fusion, LinearHomogeneity) {
  Fusion f = linear_fusion(3, 2, 2, 2, 3);
  Rng rng(4);
  Tensor a = random_vector(3, rng), b = random_vector(2, rng);
  Tensor y1 = fuse(a, b, f);
  Tensor y2 = fuse(scale(a, 2.0), b, f);
  for (std::size_t m = 0; m < 2; ++m) EXPECT_NEAR(y2[m], 2 * y1[m], 1e-12);
}

TEST(Fusion, LinearEqualsDenseContraction) {
  Fusion f = linear_fusion(3, 2, 2, 2, 5);
  const auto w = brute_dense(f);
  const DenseBilinear dense = materialize_dense(f);
  ASSERT_EQ(dense.weights.size(), w.size());
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(dense.weights[i], w[i], 1e-12);
  Rng rng(6);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    Tensor a = random_vector(3, rng), b = random_vector(2, rng);
    Tensor y = fuse(a, b, f);
    auto want = contract(w, a, b, 2);
    for (std::size_t m = 0; m < 2; ++m) worst = std::max(worst, std::abs(y[m] - want[m]));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Fusion, IdentityProjectionsReduceToFactorCore) {
  Rng rng(7);
  Fusion f(FusionConfig{3, 3, 2, 3, 3, 3, 1, Activation::linear}, rng);
  auto set_identity = [](Tensor& t) {
    auto d = t.mutable_data();
    const std::size_t n = t.rows();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] = i == j ? 1.0 : 0.0;
  };
  set_identity(f.proj_a);
  set_identity(f.proj_b);
  const DenseBilinear dense = materialize_dense(f);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t q = 0; q < 3; ++q)
      for (std::size_t m = 0; m < 2; ++m) {
        double want = 0;
        for (std::size_t h = 0; h < 3; ++h) want += f.factors_a.at(s, h) * f.factors_b.at(q, h) * f.out.at(h, m);
        EXPECT_NEAR(dense.at(s, q, m), want, 1e-14);
      }
}

TEST(Fusion, ZeroFactorsGiveZeroTensor) {
  Fusion f = linear_fusion(3, 2, 2, 2, 8);
  for (auto& v : f.factors_a.mutable_data()) v = 0;
  for (double v : materialize_dense(f).weights) EXPECT_EQ(v, 0.0);
}

TEST(Fusion, DenseRejectsTanhMode) {
  Rng rng(9);
  Fusion f(FusionConfig::defaults(3, 2, 2), rng);
  EXPECT_THROW(materialize_dense(f), ContractError);
}

TEST(Fusion, DimensionMismatchThrows) {
  Fusion f = linear_fusion(3, 2, 2, 2, 10);
  EXPECT_THROW(fuse(Tensor::zeros({4}), Tensor::zeros({2}), f), DimensionError);
  EXPECT_THROW(fuse(Tensor::zeros({3}), Tensor::zeros({3}), f), DimensionError);
}

TEST(BatchFuse, SingleRowEqualsFuse) {
  Rng rng(11);
  Fusion f(FusionConfig::defaults(4, 3, 5), rng);
  Tensor a = random_vector(4, rng), b = random_vector(3, rng);
  Tensor one = batch_fuse(reshape(a, {1, 4}), b, f);
  Tensor ref = fuse(a, b, f);
  for (std::size_t m = 0; m < 5; ++m) EXPECT_EQ(one[m], ref[m]);
}

TEST(BatchFuse, RowsAreIndependent) {
  Rng rng(12);
  Fusion f(FusionConfig::defaults(4, 3, 5), rng);
  Tensor rows = random_matrix(3, 4, rng);
  Tensor b = random_vector(3, rng);
  // Rows 0 and 2 duplicated, then reversed.
  std::vector<double> dup(rows.data().begin(), rows.data().end());
  std::copy(dup.begin(), dup.begin() + 4, dup.begin() + 8);
  Tensor d = Tensor::matrix(3, 4, dup);
  Tensor yd = batch_fuse(d, b, f);
  for (std::size_t m = 0; m < 5; ++m) EXPECT_EQ(yd.at(0, m), yd.at(2, m));
  std::vector<double> rev;
  for (std::size_t i = 3; i-- > 0;)
    for (std::size_t k = 0; k < 4; ++k) rev.push_back(rows.at(i, k));
  Tensor y = batch_fuse(rows, b, f);
  Tensor yr = batch_fuse(Tensor::matrix(3, 4, rev), b, f);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t m = 0; m < 5; ++m) EXPECT_NEAR(yr.at(i, m), y.at(2 - i, m), 1e-15);
}

TEST(FusePairs, MatchesPerPairFuse) {
  Rng rng(13);
  Fusion f(FusionConfig::defaults(4, 4, 3), rng);
  const std::size_t G = 2, N = 3;
  Tensor a = random_matrix(G * N, 4, rng), b = random_matrix(G * N, 4, rng);
  Tensor y = f.fuse_pairs(a, b, N);
  ASSERT_EQ(y.shape(), (Shape{G * N * N, 3}));
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        std::vector<double> ai, bj;
        for (std::size_t k = 0; k < 4; ++k) {
          ai.push_back(a.at(g * N + i, k));
          bj.push_back(b.at(g * N + j, k));
        }
        Tensor ref = fuse(Tensor::vector(ai), Tensor::vector(bj), f);
        for (std::size_t m = 0; m < 3; ++m) EXPECT_NEAR(y.at((g * N + i) * N + j, m), ref[m], 1e-14);
      }
}

TEST(Fusion, GradientsMatchFiniteDifferences) {
  for (auto act : {Activation::tanh, Activation::linear}) {
    Rng rng(14);
    Fusion f(FusionConfig::with_width(3, 2, 2, 4, 2, act), rng);
    ParamStore store;
    f.register_params(store, "f");
    Tensor a = random_matrix(3, 3, rng);
    Tensor b = random_matrix(1, 2, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    std::vector<Tensor> inputs = store.tensors();
    inputs.push_back(a);
    inputs.push_back(b);
    auto rep = gradcheck([&] { return sum(tanh(f.fuse_rows(a, b, 3))); }, inputs, 1e-5, 1e-6);
    EXPECT_TRUE(rep.passed) << to_string(act) << " " << rep.max_rel_error;
  }
}
