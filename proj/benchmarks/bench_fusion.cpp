#include <benchmark/benchmark.h>

#include <vector>

#include "murel/fusion.hpp"
#include "murel/ops.hpp"

namespace {

murel::Tensor random_matrix(std::size_t r, std::size_t c, murel::Rng& rng) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return murel::Tensor::matrix(r, c, std::move(v));
}

// Question fusion over every region of a 32-scene batch; arg = regions per scene.
void BM_FuseRows(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0)), groups = 32;
  murel::Rng rng(0);
  murel::Fusion f(murel::FusionConfig::defaults(32, 16, 32), rng);
  auto a = random_matrix(groups * n, 32, rng);
  auto q = random_matrix(groups, 16, rng);
  for (auto _ : state) benchmark::DoNotOptimize(f.fuse_rows(a, q, n));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(groups * n));
}
BENCHMARK(BM_FuseRows)->Arg(8)->Arg(16)->Arg(36);

// All N x N region pairs of a 32-scene batch.
void BM_FusePairs(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0)), groups = 32;
  murel::Rng rng(1);
  murel::Fusion f(murel::FusionConfig::defaults(32, 32, 32), rng);
  auto a = random_matrix(groups * n, 32, rng);
  for (auto _ : state) benchmark::DoNotOptimize(f.fuse_pairs(a, a, n));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(groups * n * n));
}
BENCHMARK(BM_FusePairs)->Arg(8)->Arg(16)->Arg(36);

// Per-pair fuse calls, the unbatched reference for BM_FusePairs.
void BM_FusePairsLooped(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  murel::Rng rng(2);
  murel::Fusion f(murel::FusionConfig::defaults(32, 32, 32), rng);
  std::vector<murel::Tensor> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(murel::reshape(random_matrix(1, 32, rng), {32}));
  for (auto _ : state)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) benchmark::DoNotOptimize(murel::fuse(rows[i], rows[j], f));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_FusePairsLooped)->Arg(8);

}  // namespace
