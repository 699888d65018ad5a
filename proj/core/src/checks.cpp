#include "murel/checks.hpp"

#include <algorithm>

#include "murel/fusion.hpp"
#include "murel/murel.hpp"
#include "murel/ops.hpp"
#include "murel/params.hpp"
#include "murel/qencoder.hpp"

namespace murel {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, scale);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Weighted sum so every output coordinate carries a distinct gradient.
Tensor probe(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

Scene random_scene(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<double> boxes;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = rng.uniform(0.1, 0.3), h = rng.uniform(0.1, 0.3);
    boxes.insert(boxes.end(), {rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h), w, h});
  }
  return Scene{random_tensor({n, d}, rng, false), Tensor({n, 4}, std::move(boxes))};
}

class Runner {
 public:
  Runner(const GradcheckSuiteOptions& o, std::vector<GradcheckCase>& out) : o_(o), out_(out) {}

  void run(const std::string& suite, const std::string& name, const std::function<Tensor()>& f,
           std::vector<Tensor> inputs) {
    out_.push_back({suite, name, gradcheck(f, inputs, o_.eps, o_.tolerance)});
  }

  void run_store(const std::string& suite, const std::string& name, const std::function<Tensor()>& f,
                 const ParamStore& store, std::vector<Tensor> extra = {}) {
    std::vector<Tensor> inputs = store.tensors();
    inputs.insert(inputs.end(), extra.begin(), extra.end());
    auto rep = gradcheck(f, inputs, o_.eps, o_.tolerance);
    const auto& entries = store.entries();
    for (std::size_t k = 0; k < entries.size() && k < rep.per_input.size(); ++k) rep.per_input[k].name = entries[k].first;
    out_.push_back({suite, name, std::move(rep)});
  }

 private:
  const GradcheckSuiteOptions& o_;
  std::vector<GradcheckCase>& out_;
};

void tensor_core_cases(Runner& run, Rng& rng) {
  const std::string s = "tensor-core";
  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), w = random_tensor({3, 4}, rng, false);
    Tensor v = random_tensor({4}, rng);
    run.run(s, "add", [=] { return probe(add(a, b), w); }, {a, b});
    run.run(s, "sub", [=] { return probe(sub(a, b), w); }, {a, b});
    run.run(s, "mul", [=] { return probe(mul(a, b), w); }, {a, b});
    run.run(s, "add_broadcast", [=] { return probe(add(a, v), w); }, {a, v});
    run.run(s, "mul_broadcast", [=] { return probe(mul(a, v), w); }, {a, v});
    run.run(s, "tanh", [=] { return probe(tanh(a), w); }, {a});
    run.run(s, "sigmoid", [=] { return probe(sigmoid(a), w); }, {a});
    run.run(s, "relu", [=] { return probe(relu(a), w); }, {a});
    run.run(s, "scale", [=] { return probe(scale(a, -1.7), w); }, {a});
    run.run(s, "mean", [=] { return mean(mul(a, b)); }, {a, b});
    Tensor wr = random_tensor({4, 3}, rng, false);
    run.run(s, "reshape", [=] { return probe(reshape(a, {4, 3}), wr); }, {a});
  }
  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng), w = random_tensor({3, 5}, rng, false);
    run.run(s, "matmul", [=] { return probe(matmul(a, b), w); }, {a, b});
  }
  {
    Tensor a = random_tensor({2, 3}, rng), w = random_tensor({6, 3}, rng, false);
    run.run(s, "repeat_rows", [=] { return probe(repeat_rows(a, 3), w); }, {a});
    Tensor table = random_tensor({5, 3}, rng), wg = random_tensor({4, 3}, rng, false);
    const std::vector<std::size_t> idx{4, 1, 1, 0};
    run.run(s, "gather_rows", [=] { return probe(gather_rows(table, idx), wg); }, {table});
  }
  {
    Tensor u = random_tensor({4, 6}, rng), w = random_tensor({4, 6}, rng), w1 = random_tensor({1, 6}, rng);
    Tensor pw = random_tensor({4, 3}, rng, false);
    run.run(s, "rank_product", [=] { return probe(rank_product(u, w, 2), pw); }, {u, w});
    run.run(s, "rank_product_broadcast", [=] { return probe(rank_product(u, w1, 2), pw); }, {u, w1});
    Tensor pp = random_tensor({8, 3}, rng, false);
    run.run(s, "pairwise_rank_product", [=] { return probe(pairwise_rank_product(u, w, 2, 2), pp); }, {u, w});
  }
  {
    Tensor a = random_tensor({6, 4}, rng), w = random_tensor({2, 4}, rng, false), wr = random_tensor({4}, rng, false);
    const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1};
    run.run(s, "reduce_max", [=] { return probe(reduce_max(a).values, wr); }, {a});
    run.run(s, "segment_max", [=] { return probe(segment_max(a, 3).values, w); }, {a});
    run.run(s, "segment_max_masked", [=] { return probe(segment_max(a, 3, mask).values, w); }, {a});
    Tensor ws = random_tensor({6, 4}, rng, false);
    run.run(s, "segment_softmax", [=] { return probe(segment_softmax(a, 3, mask), ws); }, {a});
    Tensor att = random_tensor({6, 2}, rng), vals = random_tensor({6, 3}, rng), wsum = random_tensor({2, 6}, rng, false);
    run.run(s, "segment_weighted_sum", [=] { return probe(segment_weighted_sum(att, vals, 3), wsum); }, {att, vals});
  }
  {
    Tensor logits = random_tensor({5}, rng), batch = random_tensor({3, 5}, rng);
    const std::vector<std::size_t> targets{4, 0, 2};
    run.run(s, "softmax_cross_entropy", [=] { return softmax_cross_entropy(logits, 3); }, {logits});
    run.run(s, "softmax_cross_entropy_mean", [=] { return softmax_cross_entropy_mean(batch, targets); }, {batch});
  }
}

void fusion_cases(Runner& run, Rng& rng) {
  for (auto act : {Activation::tanh, Activation::linear}) {
    const std::string mode = to_string(act);
    Fusion f(FusionConfig::with_width(5, 3, 4, 6, 3, act), rng);
    ParamStore store;
    f.register_params(store, "fusion");
    Tensor a = random_tensor({4, 5}, rng), b = random_tensor({2, 3}, rng);
    Tensor w = random_tensor({4, 4}, rng, false), wp = random_tensor({8, 4}, rng, false);
    run.run_store("fusion", "fuse_rows_" + mode, [=] { return probe(f.fuse_rows(a, b, 2), w); }, store, {a, b});
    Fusion fp(FusionConfig::with_width(5, 5, 4, 6, 3, act), rng);
    ParamStore pair_store;
    fp.register_params(pair_store, "fusion");
    run.run_store("fusion", "fuse_pairs_" + mode, [=] { return probe(fp.fuse_pairs(a, a, 2), wp); }, pair_store, {a});
    Tensor va = random_tensor({5}, rng), vb = random_tensor({3}, rng), wv = random_tensor({4}, rng, false);
    run.run_store("fusion", "fuse_vector_" + mode, [=] { return probe(fuse(va, vb, f), wv); }, store, {va, vb});
  }
}

void qencoder_cases(Runner& run, Rng& rng) {
  QuestionEncoder enc(GruConfig{7, 3, 4}, rng);
  ParamStore store;
  enc.register_params(store, "qencoder");
  const std::vector<std::size_t> tokens{2, 5, 3, 6};
  run.run_store("qencoder", "sum_encode_4_tokens", [=] { return sum(enc.encode(tokens)); }, store);
  const std::vector<std::vector<std::size_t>> batch{{2, 3, 4, 0}, {5, 0, 0, 0}, {1, 6, 2, 3}};
  Tensor w = random_tensor({3, 4}, rng, false);
  run.run_store("qencoder", "padded_batch", [=] { return probe(enc.encode_batch(batch), w); }, store);
}

void murel_cases(Runner& run, Rng& rng) {
  for (bool shared : {true, false}) {
    MurelConfig c;
    c.steps = 2;
    c.region_dim = 6;
    c.question_dim = 4;
    c.answers = 3;
    c.shared_weights = shared;
    MurelNet net(c, rng);
    QuestionEncoder enc(GruConfig{8, 3, 4}, rng);
    ParamStore store;
    net.register_params(store, "murel");
    enc.register_params(store, "qencoder");
    std::vector<Scene> scenes{random_scene(3, 6, rng), random_scene(3, 6, rng)};
    const std::vector<const Scene*> ptrs{&scenes[0], &scenes[1]};
    const RegionBatch batch = RegionBatch::from_scenes(ptrs);
    const std::vector<std::vector<std::size_t>> tokens{{2, 3, 4}, {5, 6, 7}};
    const std::vector<std::size_t> targets{0, 2};
    run.run_store("murel", shared ? "full_loss_shared" : "full_loss_unshared",
                  [=] { return softmax_cross_entropy_mean(net.forward(batch, enc.encode_batch(tokens)).scores, targets); },
                  store);
  }
}

void baseline_cases(Runner& run, Rng& rng) {
  AttentionConfig c;
  c.region_dim = 6;
  c.question_dim = 4;
  c.answers = 3;
  c.width = 5;
  AttentionBaseline model(c, rng);
  QuestionEncoder enc(GruConfig{8, 3, 4}, rng);
  ParamStore store;
  model.register_params(store, "baseline");
  enc.register_params(store, "qencoder");
  std::vector<Scene> scenes{random_scene(3, 6, rng), random_scene(3, 6, rng)};
  const std::vector<const Scene*> ptrs{&scenes[0], &scenes[1]};
  const RegionBatch batch = RegionBatch::from_scenes(ptrs);
  const std::vector<std::vector<std::size_t>> tokens{{2, 3}, {4, 5, 6}};
  const std::vector<std::size_t> targets{1, 2};
  run.run_store("baseline", "full_loss",
                [=] { return softmax_cross_entropy_mean(model.forward(batch, enc.encode_batch(tokens)).scores, targets); },
                store);
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(const GradcheckSuiteOptions& options) {
  std::vector<GradcheckCase> out;
  Runner run(options, out);
  Rng rng(options.seed + 0x6C0ULL);
  tensor_core_cases(run, rng);
  fusion_cases(run, rng);
  qencoder_cases(run, rng);
  murel_cases(run, rng);
  baseline_cases(run, rng);
  return out;
}

bool all_passed(const std::vector<GradcheckCase>& cases) {
  return std::all_of(cases.begin(), cases.end(), [](const GradcheckCase& c) { return c.report.passed; });
}

double max_rel_error(const std::vector<GradcheckCase>& cases) {
  double m = 0.0;
  for (const auto& c : cases) m = std::max(m, c.report.max_rel_error);
  return m;
}

nlohmann::ordered_json to_json(const std::vector<GradcheckCase>& cases, const GradcheckSuiteOptions& options) {
  nlohmann::ordered_json j;
  j["eps"] = options.eps;
  j["tolerance"] = options.tolerance;
  j["seed"] = options.seed;
  j["passed"] = all_passed(cases);
  j["max_rel_error"] = max_rel_error(cases);
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : cases) {
    nlohmann::ordered_json e;
    e["suite"] = c.suite;
    e["case"] = c.name;
    e["passed"] = c.report.passed;
    e["max_rel_error"] = c.report.max_rel_error;
    auto inputs = nlohmann::ordered_json::array();
    for (const auto& p : c.report.per_input)
      inputs.push_back(nlohmann::ordered_json{{"name", p.name}, {"coordinates", p.coordinates}, {"max_rel_error", p.max_rel_error}});
    e["inputs"] = inputs;
    arr.push_back(e);
  }
  j["cases"] = arr;
  return j;
}

}  // namespace murel
