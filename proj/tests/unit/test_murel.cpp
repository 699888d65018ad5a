#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "murel/errors.hpp"
#include "murel/gradcheck.hpp"
#include "murel/murel.hpp"
#include "murel/ops.hpp"

using namespace murel;

namespace {

Scene random_scene(std::size_t n, std::size_t dv, Rng& rng) {
  std::vector<double> f(n * dv), b;
  for (auto& v : f) v = rng.uniform(-1, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = rng.uniform(0.05, 0.3), h = rng.uniform(0.05, 0.3);
    b.insert(b.end(), {rng.uniform(0, 1 - w), rng.uniform(0, 1 - h), w, h});
  }
  return Scene{Tensor::matrix(n, dv, f), Tensor::matrix(n, 4, b)};
}

Tensor random_question(std::size_t dq, Rng& rng) {
  std::vector<double> v(dq);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return Tensor::vector(v);
}

MurelConfig small_config(std::size_t steps, std::size_t dv = 4, std::size_t dq = 3) {
  MurelConfig c;
  c.steps = steps;
  c.region_dim = dv;
  c.question_dim = dq;
  c.answers = 4;
  return c;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  std::vector<double> out(t.cols());
  for (std::size_t k = 0; k < t.cols(); ++k) out[k] = t.at(r, k);
  return out;
}

}  // namespace

TEST(Scene, ValidationRejectsBadBoxes) {
  Rng rng(0);
  Scene s = random_scene(3, 4, rng);
  EXPECT_NO_THROW(s.validate());
  Scene wide{s.features, Tensor::matrix(3, 4, {0.9, 0, 0.2, 0.1, 0, 0, 0.1, 0.1, 0, 0, 0.1, 0.1})};
  EXPECT_THROW(wide.validate(), DomainError);
  Scene mismatched{s.features, Tensor::zeros({2, 4})};
  EXPECT_THROW(mismatched.validate(), DimensionError);
  Scene empty;
  EXPECT_THROW(empty.validate(), DomainError);
}

TEST(RegionBatch, PaddingAndPairMask) {
  Rng rng(1);
  Scene a = random_scene(2, 4, rng), b = random_scene(3, 4, rng);
  std::vector<const Scene*> scenes{&a, &b};
  RegionBatch batch = RegionBatch::from_scenes(scenes);
  EXPECT_EQ(batch.max_regions, 3u);
  EXPECT_EQ(batch.region_mask, (std::vector<std::uint8_t>{1, 1, 0, 1, 1, 1}));
  auto with_self = batch.pair_mask(true);
  auto without = batch.pair_mask(false);
  ASSERT_EQ(with_self.size(), 18u);
  EXPECT_EQ(std::accumulate(with_self.begin(), with_self.end(), 0), 4 + 9);
  EXPECT_EQ(std::accumulate(without.begin(), without.end(), 0), 2 + 6);
}

TEST(MurelCell, ZeroParametersAreResidualIdentity) {
  Rng rng(2);
  for (std::size_t steps = 1; steps <= 8; ++steps) {
    MurelNet net(small_config(steps), rng);
    ParamStore store;
    net.register_params(store);
    store.fill(0.0);
    Scene s = random_scene(4, 4, rng);
    auto out = murel_forward(s, random_question(3, rng), net);
    ASSERT_EQ(out.traces.size(), steps);
    for (const auto& tr : out.traces) {
      auto in = tr.state_in.data(), st = tr.state.data();
      for (std::size_t k = 0; k < in.size(); ++k) ASSERT_EQ(st[k], in[k]);
    }
    auto last = out.traces.back().state.data();
    for (std::size_t k = 0; k < last.size(); ++k) ASSERT_EQ(last[k], s.features[k]);
  }
}

TEST(MurelCell, StateIsPreviousStatePlusUpdate) {
  Rng rng(3);
  MurelNet net(small_config(3), rng);
  auto out = murel_forward(random_scene(5, 4, rng), random_question(3, rng), net);
  for (const auto& tr : out.traces) {
    auto in = tr.state_in.data(), x = tr.update.data(), st = tr.state.data();
    for (std::size_t k = 0; k < in.size(); ++k) ASSERT_EQ(st[k], in[k] + x[k]);
  }
}

TEST(MurelCell, ContextMatchesTripleLoopBruteForce) {
  Rng rng(4);
  MurelConfig cfg = small_config(1);
  CellParams params(cfg, rng);
  Scene s = random_scene(3, 4, rng);
  Tensor q = random_question(3, rng);
  RegionBatch batch = RegionBatch::single(s);
  CellOutput out = murel_cell(s.features, batch, reshape(q, {1, 3}), params, cfg);
  const auto& tr = out.trace;
  std::vector<std::vector<double>> m(3);
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor mi = fuse(Tensor::vector(row(s.features, i)), q, params.qs);
    m[i].assign(mi.data().begin(), mi.data().end());
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(tr.multimodal.at(i, k), m[i][k], 1e-12);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double best = -INFINITY;
      for (std::size_t j = 0; j < 3; ++j) {
        Tensor spatial = fuse(Tensor::vector(row(s.boxes, i)), Tensor::vector(row(s.boxes, j)), *params.box);
        Tensor semantic = fuse(Tensor::vector(m[i]), Tensor::vector(m[j]), *params.sem);
        best = std::max(best, spatial[k] + semantic[k]);
      }
      EXPECT_NEAR(tr.context.at(i, k), best, 1e-12);
      EXPECT_NEAR(tr.update.at(i, k), m[i][k] + best, 1e-12);
    }
  }
}

TEST(MurelCell, SingleRegionSelfPairAndEmptyPairSet) {
  Rng rng(5);
  MurelConfig cfg = small_config(1);
  CellParams params(cfg, rng);
  Scene s = random_scene(1, 4, rng);
  Tensor q = reshape(random_question(3, rng), {1, 3});
  RegionBatch batch = RegionBatch::single(s);
  CellOutput with_self = murel_cell(s.features, batch, q, params, cfg);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(with_self.trace.context.at(0, k), with_self.trace.relations.at(0, k));
  cfg.include_self_pairs = false;
  CellOutput without = murel_cell(s.features, batch, q, params, cfg);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(without.trace.context.at(0, k), 0.0);
    EXPECT_EQ(without.trace.context_source[k], -1);
    EXPECT_EQ(without.trace.update.at(0, k), without.trace.multimodal.at(0, k));
  }
}

TEST(MurelCell, NoPairwiseUpdateIsMultimodalOnly) {
  Rng rng(6);
  MurelConfig cfg = small_config(1);
  cfg.pairwise = false;
  CellParams params(cfg, rng);
  EXPECT_FALSE(params.box.has_value());
  Scene s = random_scene(3, 4, rng);
  CellOutput out = murel_cell(s.features, RegionBatch::single(s), reshape(random_question(3, rng), {1, 3}), params, cfg);
  EXPECT_FALSE(out.trace.pairwise());
  auto x = out.trace.update.data(), m = out.trace.multimodal.data();
  for (std::size_t k = 0; k < x.size(); ++k) EXPECT_EQ(x[k], m[k]);
}

TEST(MurelCell, ShapeErrors) {
  Rng rng(7);
  MurelConfig cfg = small_config(1);
  CellParams params(cfg, rng);
  Scene s = random_scene(3, 4, rng);
  RegionBatch batch = RegionBatch::single(s);
  EXPECT_THROW(murel_cell(Tensor::zeros({3, 5}), batch, Tensor::zeros({1, 3}), params, cfg), DimensionError);
  EXPECT_THROW(murel_cell(s.features, batch, Tensor::zeros({1, 2}), params, cfg), DimensionError);
}

TEST(MurelNet, SingleStepEqualsCellPoolHead) {
  Rng rng(8);
  MurelNet net(small_config(1), rng);
  Scene s = random_scene(4, 4, rng);
  Tensor q = random_question(3, rng);
  auto out = murel_forward(s, q, net);
  CellOutput cell = murel_cell(s.features, RegionBatch::single(s), reshape(q, {1, 3}), net.cells()[0], net.config());
  Tensor pooled = reshape(reduce_max(cell.state).values, {1, 4});
  Tensor want = net.head().fuse_rows(pooled, reshape(q, {1, 3}));
  for (std::size_t a = 0; a < 4; ++a) EXPECT_NEAR(out.scores[a], want[a], 1e-13);
}

TEST(MurelNet, RegionPermutationInvariance) {
  Rng rng(9);
  MurelNet net(small_config(3, 6, 3), rng);
  std::vector<std::size_t> perm(5);
  for (int trial = 0; trial < 5; ++trial) {
    Scene s = random_scene(5, 6, rng);
    Tensor q = random_question(3, rng);
    auto base = murel_forward(s, q, net).scores;
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    auto moved = murel_forward(s.permuted(perm), q, net).scores;
    for (std::size_t a = 0; a < 4; ++a) EXPECT_NEAR(moved[a], base[a], 1e-9);
  }
}

TEST(MurelNet, BatchedForwardMatchesSingleScenes) {
  Rng rng(10);
  MurelNet net(small_config(2), rng);
  Scene a = random_scene(2, 4, rng), b = random_scene(4, 4, rng);
  Tensor qa = random_question(3, rng), qb = random_question(3, rng);
  std::vector<const Scene*> scenes{&a, &b};
  std::vector<double> qs(qa.data().begin(), qa.data().end());
  qs.insert(qs.end(), qb.data().begin(), qb.data().end());
  auto batched = net.forward(RegionBatch::from_scenes(scenes), Tensor::matrix(2, 3, qs)).scores;
  auto sa = murel_forward(a, qa, net).scores, sb = murel_forward(b, qb, net).scores;
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(batched.at(0, k), sa[k], 1e-12);
    EXPECT_NEAR(batched.at(1, k), sb[k], 1e-12);
  }
}

TEST(MurelNet, SharedParameterCountIndependentOfSteps) {
  std::vector<std::size_t> counts;
  for (std::size_t steps = 1; steps <= 4; ++steps) {
    Rng rng(11);
    MurelConfig cfg = small_config(steps, 32, 16);
    MurelNet net(cfg, rng);
    ParamStore store;
    net.register_params(store);
    EXPECT_EQ(store.parameter_count(), net.parameter_count());
    counts.push_back(net.parameter_count());
  }
  EXPECT_EQ(std::to_string(counts[0]), std::to_string(counts[3]));
  EXPECT_TRUE(std::all_of(counts.begin(), counts.end(), [&](std::size_t c) { return c == counts[0]; }));
}

TEST(MurelNet, UnsharedCellsScaleWithSteps) {
  Rng rng(12);
  MurelConfig cfg = small_config(3, 32, 16);
  MurelNet shared(cfg, rng);
  cfg.shared_weights = false;
  MurelNet unshared(cfg, rng);
  EXPECT_EQ(unshared.cell_parameter_count(), 3 * shared.cell_parameter_count());
  EXPECT_EQ(unshared.parameter_count(), 3 * shared.cell_parameter_count() + shared.head().parameter_count());
}

TEST(MurelNet, PairwiseOffDropsPairwiseParameters) {
  Rng rng(13);
  MurelConfig cfg = small_config(2);
  MurelNet on(cfg, rng);
  cfg.pairwise = false;
  MurelNet off(cfg, rng);
  EXPECT_EQ(on.cell_parameter_count() - off.cell_parameter_count(),
            on.cells()[0].box->parameter_count() + on.cells()[0].sem->parameter_count());
}

TEST(MurelNet, StepsOutsideRangeRejected) {
  Rng rng(14);
  EXPECT_THROW(MurelNet(small_config(0), rng), DataError);
  EXPECT_THROW(MurelNet(small_config(9), rng), DataError);
}

TEST(MurelNet, GradientMatchesFiniteDifferences) {
  Rng rng(15);
  MurelConfig cfg = small_config(2, 3, 2);
  cfg.answers = 3;
  MurelNet net(cfg, rng);
  ParamStore store;
  net.register_params(store);
  Scene s = random_scene(3, 3, rng);
  Tensor q = random_question(2, rng);
  std::vector<Tensor> params = store.tensors();
  auto rep = gradcheck([&] { return softmax_cross_entropy(murel_forward(s, q, net).scores, 1); }, params, 1e-5, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(Attention, IdenticalRegionsGiveUniformWeights) {
  Rng rng(16);
  AttentionConfig cfg;
  cfg.region_dim = 4;
  cfg.question_dim = 3;
  cfg.answers = 4;
  cfg.width = 6;
  AttentionBaseline model(cfg, rng);
  std::vector<double> f;
  for (int i = 0; i < 5; ++i) f.insert(f.end(), {0.1, -0.2, 0.3, 0.4});
  std::vector<double> b;
  for (int i = 0; i < 5; ++i) b.insert(b.end(), {0.1 * i, 0.1, 0.1, 0.1});
  Scene s{Tensor::matrix(5, 4, f), Tensor::matrix(5, 4, b)};
  auto out = attention_baseline_forward(s, random_question(3, rng), model);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t g = 0; g < cfg.glimpses; ++g) EXPECT_NEAR(out.alpha.at(i, g), 0.2, 1e-12);
}

TEST(Attention, WeightsSumToOneAndCountMatches) {
  Rng rng(17);
  AttentionConfig cfg;
  cfg.region_dim = 6;
  cfg.question_dim = 3;
  cfg.answers = 5;
  cfg.width = 8;
  AttentionBaseline model(cfg, rng);
  ParamStore store;
  model.register_params(store);
  EXPECT_EQ(store.parameter_count(), model.parameter_count());
  for (int trial = 0; trial < 10; ++trial) {
    auto out = attention_baseline_forward(random_scene(2 + trial % 5, 6, rng), random_question(3, rng), model);
    for (std::size_t g = 0; g < cfg.glimpses; ++g) {
      double total = 0;
      for (std::size_t i = 0; i < out.alpha.rows(); ++i) total += out.alpha.at(i, g);
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Attention, GradientMatchesFiniteDifferences) {
  Rng rng(18);
  AttentionConfig cfg;
  cfg.region_dim = 3;
  cfg.question_dim = 2;
  cfg.answers = 3;
  cfg.width = 4;
  AttentionBaseline model(cfg, rng);
  ParamStore store;
  model.register_params(store);
  Scene s = random_scene(3, 3, rng);
  Tensor q = random_question(2, rng);
  std::vector<Tensor> params = store.tensors();
  auto rep = gradcheck([&] { return softmax_cross_entropy(attention_baseline_forward(s, q, model).scores, 2); }, params,
                       1e-5, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(Attention, MatchedConfigWithinTenPercent) {
  for (std::size_t dv : {6, 32}) {
    Rng rng(19);
    MurelConfig cfg = small_config(3, dv, 16);
    cfg.answers = 15;
    MurelNet net(cfg, rng);
    AttentionConfig a = matched_attention_config(cfg, net.parameter_count());
    const double ratio = static_cast<double>(a.parameter_count()) / static_cast<double>(net.parameter_count());
    EXPECT_GT(ratio, 0.9);
    EXPECT_LT(ratio, 1.1);
  }
}

TEST(Predict, ArgmaxAndTies) {
  AnswerSpace answers({"red", "blue"});
  std::vector<double> s1{0.1, 0.9}, s2{0.5, 0.5};
  EXPECT_EQ(predict(s1, answers), "blue");
  EXPECT_EQ(predict(s2, answers), "red");
  Rng rng(20);
  AnswerSpace five({"a", "b", "c", "d", "e"});
  for (int t = 0; t < 20; ++t) {
    std::vector<double> s(5);
    for (auto& v : s) v = rng.uniform(-3, 3);
    std::vector<double> shifted = s;
    const double c = rng.uniform(-100, 100);
    for (auto& v : shifted) v += c;
    EXPECT_EQ(predict(s, five), predict(shifted, five));
  }
}

TEST(AnswerSpace, LookupErrors) {
  AnswerSpace answers({"yes", "no"});
  EXPECT_EQ(answers.index("no"), 1u);
  EXPECT_THROW(answers.index("maybe"), IndexError);
  EXPECT_THROW(answers.answer(2), IndexError);
  EXPECT_THROW(AnswerSpace({"x", "x"}), DataError);
}
