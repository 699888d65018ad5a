#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "murel/errors.hpp"
#include "murel/ops.hpp"
#include "murel/viz.hpp"

using namespace murel;
using namespace murel::viz;

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

CellTrace random_trace(std::size_t n, std::size_t dv, std::uint64_t seed) {
  Rng rng(seed);
  MurelConfig cfg;
  cfg.steps = 1;
  cfg.region_dim = dv;
  cfg.question_dim = 3;
  cfg.answers = 2;
  CellParams params(cfg, rng);
  Scene s = random_scene(n, dv, rng);
  std::vector<double> q{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  return murel_cell(s.features, RegionBatch::single(s), Tensor::matrix(1, 3, q), params, cfg).trace;
}

/// Hand-built single-scene trace; context and its sources come from the relations.
CellTrace hand_trace(std::size_t n, std::size_t d, const std::vector<double>& multimodal,
                     const std::vector<double>& relations) {
  CellTrace t;
  t.groups = 1;
  t.max_regions = n;
  t.region_mask.assign(n, 1);
  t.multimodal = Tensor::matrix(n, d, multimodal);
  t.state_in = Tensor::zeros({n, d});
  t.relations = Tensor::matrix(n * n, d, relations);
  MaxResult ctx = segment_max(t.relations, n);
  t.context = ctx.values;
  t.context_source = ctx.argmax;
  t.update = add(t.multimodal, t.context);
  t.state = add(t.state_in, t.update);
  return t;
}

std::vector<std::size_t> brute_counts(const Tensor& state) {
  const std::size_t n = state.rows(), d = state.cols();
  std::vector<std::size_t> counts(n, 0);
  for (std::size_t k = 0; k < d; ++k) {
    std::size_t winner = 0;
    double best = state.at(0, k);
    for (std::size_t i = 1; i < n; ++i)
      if (state.at(i, k) > best) {
        best = state.at(i, k);
        winner = i;
      }
    counts[winner] += 1;
  }
  return counts;
}

std::size_t brute_i_star(const CellTrace& t) {
  const std::size_t n = t.max_regions, d = t.context.cols();
  std::size_t star = 0;
  double best = -1;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double r = t.context.at(i, k) / (t.update.at(i, k) + 1e-8);
      s += r * r;
    }
    if (std::sqrt(s) > best) {
      best = std::sqrt(s);
      star = i;
    }
  }
  return star;
}

/// Source counts for row i read straight from the relation tensor.
std::vector<std::size_t> brute_sources(const CellTrace& t, std::size_t i) {
  const std::size_t n = t.max_regions, d = t.relations.cols();
  std::vector<std::size_t> counts(n, 0);
  for (std::size_t k = 0; k < d; ++k) {
    std::size_t winner = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (t.relations.at(i * n + j, k) > t.relations.at(i * n + winner, k)) winner = j;
    counts[winner] += 1;
  }
  return counts;
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(ContributionMap, SingleRegionTakesEverything) {
  CellTrace t = random_trace(1, 6, 1);
  EXPECT_EQ(contribution_map(t), (std::vector<double>{1.0}));
}

TEST(ContributionMap, DominantRegion) {
  CellTrace t = random_trace(4, 8, 2);
  auto s = t.state.mutable_data();
  for (std::size_t k = 0; k < 8; ++k) s[k] = 100.0;
  EXPECT_EQ(contribution_map(t), (std::vector<double>{1, 0, 0, 0}));
}

TEST(ContributionMap, MatchesBruteForceCount) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CellTrace t = random_trace(4, 8, 100 + seed);
    auto counts = brute_counts(t.state);
    EXPECT_EQ(contribution_counts(t), counts);
    auto f = contribution_map(t);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(f[i], static_cast<double>(counts[i]) / 8.0);
  }
}

TEST(ContributionMap, TiesGoToLowestIndex) {
  CellTrace t = random_trace(3, 4, 3);
  for (auto& v : t.state.mutable_data()) v = 0.5;
  EXPECT_EQ(contribution_counts(t), (std::vector<std::size_t>{4, 0, 0}));
}

TEST(ContributionMap, StepOutOfRange) {
  std::vector<CellTrace> traces{random_trace(3, 4, 4)};
  EXPECT_NO_THROW(contribution_map(traces, 1));
  EXPECT_THROW(contribution_map(traces, 0), IndexError);
  EXPECT_THROW(contribution_map(traces, 2), IndexError);
}

TEST(PairwiseRelations, ConstructedDominance) {
  const std::size_t n = 3, d = 4;
  // Region 1's own term nearly cancels its context, so it is the most pairwise-driven.
  std::vector<double> m{0.5, 0.5, 0.5, 0.5, -9.99, -9.99, -9.99, -9.99, 0.5, 0.5, 0.5, 0.5};
  std::vector<double> r(n * n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) r[(i * n + 2) * d + k] = 10.0;
  CellTrace t = hand_trace(n, d, m, r);
  auto rel = pairwise_relations(t);
  ASSERT_TRUE(rel.i_star.has_value());
  EXPECT_EQ(*rel.i_star, 1u);
  ASSERT_EQ(rel.edges.size(), 1u);
  EXPECT_EQ(rel.edges[0].source, 2u);
  EXPECT_EQ(rel.edges[0].target, 1u);
  EXPECT_EQ(rel.edges[0].weight, 1.0);
}

TEST(PairwiseRelations, ThresholdRule) {
  const std::size_t n = 5, d = 5;
  std::vector<double> m(n * d, 0.1);
  std::vector<double> r(n * n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) r[(i * n + j) * d + j] = 1.0;
  CellTrace t = hand_trace(n, d, m, r);
  auto strict = pairwise_relations(t, 1.0);
  EXPECT_TRUE(strict.edges.empty());
  EXPECT_FALSE(strict.i_star.has_value());
  auto loose = pairwise_relations(t, 0.2);
  ASSERT_TRUE(loose.i_star.has_value());
  EXPECT_EQ(loose.edges.size(), 4u);
  for (const auto& e : loose.edges) {
    EXPECT_EQ(e.weight, 0.2);
    EXPECT_NE(e.source, *loose.i_star);
  }
}

TEST(PairwiseRelations, MatchesBruteForceOnRandomTraces) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CellTrace t = random_trace(4, 8, 200 + seed);
    const std::size_t star = brute_i_star(t);
    const auto sources = brute_sources(t, star);
    auto rel = pairwise_relations(t, 0.0);
    std::size_t expected_edges = 0;
    for (std::size_t j = 0; j < 4; ++j) expected_edges += (j != star && sources[j] > 0);
    ASSERT_EQ(rel.edges.size(), expected_edges);
    if (expected_edges) EXPECT_EQ(*rel.i_star, star);
    for (const auto& e : rel.edges) {
      EXPECT_EQ(e.target, star);
      EXPECT_EQ(e.weight, static_cast<double>(sources[e.source]) / 8.0);
    }
  }
}

TEST(PairwiseRelations, LoweringThresholdOnlyAddsEdges) {
  CellTrace t = random_trace(6, 8, 5);
  std::size_t previous = 0;
  for (double th : {1.0, 0.75, 0.5, 0.25, 0.125, 0.0}) {
    auto rel = pairwise_relations(t, th);
    EXPECT_GE(rel.edges.size(), previous);
    for (const auto& e : rel.edges) EXPECT_GE(e.weight, th);
    previous = rel.edges.size();
  }
}

TEST(PairwiseRelations, RequiresPairwiseTrace) {
  CellTrace t = random_trace(3, 4, 6);
  t.relations = Tensor();
  EXPECT_THROW(pairwise_relations(t), ContractError);
}

TEST(PairwiseRelations, NormRatioMode) {
  CellTrace t = random_trace(4, 8, 7);
  auto impact = pairwise_impact(t, 0, ImpactMode::norm_ratio);
  for (std::size_t i = 0; i < 4; ++i) {
    double se = 0, sx = 0;
    for (std::size_t k = 0; k < 8; ++k) {
      se += t.context.at(i, k) * t.context.at(i, k);
      sx += t.update.at(i, k) * t.update.at(i, k);
    }
    EXPECT_NEAR(impact[i], std::sqrt(se) / (std::sqrt(sx) + 1e-8), 1e-15);
  }
}

TEST(Report, FrequenciesSumToOneAndEdgesAboveThreshold) {
  std::vector<CellTrace> traces{random_trace(5, 8, 8), random_trace(5, 8, 9)};
  auto rep = build_report(traces);
  ASSERT_EQ(rep.steps.size(), 2u);
  for (const auto& s : rep.steps) {
    EXPECT_NEAR(std::accumulate(s.frequencies.begin(), s.frequencies.end(), 0.0), 1.0, 1e-12);
    EXPECT_EQ(std::accumulate(s.counts.begin(), s.counts.end(), std::size_t{0}), 8u);
    for (const auto& e : s.edges) EXPECT_GE(e.weight, kDefaultThreshold);
  }
  EXPECT_EQ(to_json(rep).dump(), to_json(build_report(traces)).dump());
}

TEST(Svg, OpacityFloorAndFullOpacity) {
  Rng rng(10);
  Scene s = random_scene(2, 4, rng);
  StepReport step;
  step.step = 1;
  step.frequencies = {1.0, 0.0};
  step.counts = {4, 0};
  const std::string svg = render_svg(s, step);
  EXPECT_NE(svg.find("id=\"region-0\""), std::string::npos);
  const auto r0 = svg.find("id=\"region-0\""), r1 = svg.find("id=\"region-1\"");
  EXPECT_NE(svg.find("fill-opacity=\"1.0000\"", r0), std::string::npos);
  EXPECT_LT(svg.find("fill-opacity=\"1.0000\"", r0), r1);
  EXPECT_NE(svg.find("fill-opacity=\"0.0500\"", r1), std::string::npos);
}

TEST(Svg, NoHighlightWithoutIStar) {
  Rng rng(11);
  Scene s = random_scene(3, 4, rng);
  StepReport step;
  step.frequencies = {0.5, 0.25, 0.25};
  const std::string svg = render_svg(s, step);
  EXPECT_EQ(count_of(svg, "#00a000"), 0u);
  EXPECT_EQ(count_of(svg, "#d00000"), 0u);
  EXPECT_EQ(count_of(svg, "<rect id=\"region-"), 3u);
}

TEST(Svg, HighlightsIStarAndSources) {
  Rng rng(12);
  Scene s = random_scene(3, 4, rng);
  StepReport step;
  step.frequencies = {0.5, 0.25, 0.25};
  step.i_star = 1;
  step.edges = {Edge{2, 1, 0.5}};
  const std::string svg = render_svg(s, step);
  EXPECT_EQ(count_of(svg, "#00a000"), 1u);
  EXPECT_EQ(count_of(svg, "#d00000"), 1u);
  EXPECT_EQ(svg, render_svg(s, step));
}

TEST(Svg, RegionCountMismatch) {
  Rng rng(13);
  Scene s = random_scene(3, 4, rng);
  StepReport step;
  step.frequencies = {1.0};
  EXPECT_THROW(render_svg(s, step), DimensionError);
  step.frequencies = {1, 0, 0};
  EXPECT_THROW(render_overlay(s, step, "/proc/murel-no-such-dir/x.svg"), FileError);
}
