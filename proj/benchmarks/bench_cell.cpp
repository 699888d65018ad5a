#include <benchmark/benchmark.h>

#include <vector>

#include "murel/murel.hpp"
#include "murel/ops.hpp"
#include "murel/synthdata.hpp"

namespace {

struct Batch {
  std::vector<murel::Scene> scenes;
  murel::RegionBatch regions;
  murel::Tensor questions;
  std::vector<std::size_t> targets;
};

Batch make_batch(std::size_t size) {
  murel::synth::GeneratorConfig cfg;
  cfg.min_objects = cfg.max_objects;
  const auto ds = murel::synth::generate_dataset(size, 1, 0, cfg);
  Batch b;
  for (const auto& r : ds.records) b.scenes.push_back(murel::synth::to_scene(r));
  std::vector<const murel::Scene*> ptrs;
  for (const auto& s : b.scenes) ptrs.push_back(&s);
  b.regions = murel::RegionBatch::from_scenes(ptrs);
  murel::Rng rng(3);
  std::vector<double> q(size * 16);
  for (auto& v : q) v = rng.uniform(-1, 1);
  b.questions = murel::Tensor::matrix(size, 16, q);
  for (std::size_t i = 0; i < size; ++i) b.targets.push_back(i % 15);
  return b;
}

murel::MurelConfig config(std::int64_t steps, bool pairwise) {
  murel::MurelConfig c;
  c.steps = static_cast<std::size_t>(steps);
  c.pairwise = pairwise;
  c.answers = 15;
  return c;
}

// Forward pass of a 32-scene batch with 8 regions each; arg = T.
void BM_MurelForward(benchmark::State& state) {
  murel::Rng rng(4);
  murel::MurelNet net(config(state.range(0), true), rng);
  const Batch b = make_batch(32);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(b.regions, b.questions).scores);
}
BENCHMARK(BM_MurelForward)->DenseRange(1, 4)->Unit(benchmark::kMillisecond);

// Forward plus backward through the tape; arg = T.
void BM_MurelTrainStep(benchmark::State& state) {
  murel::Rng rng(5);
  murel::MurelNet net(config(state.range(0), state.range(1) != 0), rng);
  murel::ParamStore store;
  net.register_params(store);
  const Batch b = make_batch(32);
  for (auto _ : state) {
    murel::Tape tape;
    murel::TapeScope scope(tape);
    auto loss = murel::softmax_cross_entropy_mean(net.forward(b.regions, b.questions).scores, b.targets);
    tape.backward(loss);
    store.zero_grad();
  }
}
BENCHMARK(BM_MurelTrainStep)->ArgsProduct({{1, 3}, {0, 1}})->ArgNames({"T", "pairwise"})->Unit(benchmark::kMillisecond);

}  // namespace
