#include "murel/murel.hpp"

#include <algorithm>

#include "murel/errors.hpp"
#include "murel/ops.hpp"

namespace murel {

// --- Scene / RegionBatch ----------------------------------------------------

void Scene::validate() const {
  if (!features.defined() || !boxes.defined()) throw DomainError("scene has no regions");
  if (features.rank() != 2) throw DimensionError("scene features must be [N x d_v], got " + shape_str(features.shape()));
  if (boxes.rank() != 2 || boxes.cols() != 4 || boxes.rows() != features.rows()) {
    throw DimensionError("scene boxes must be [" + std::to_string(features.rows()) + " x 4], got " +
                         shape_str(boxes.shape()));
  }
  constexpr double slack = 1e-9;
  for (std::size_t i = 0; i < boxes.rows(); ++i) {
    const double x = boxes.at(i, 0), y = boxes.at(i, 1), w = boxes.at(i, 2), h = boxes.at(i, 3);
    for (double v : {x, y, w, h}) {
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError("box " + std::to_string(i) + " has a coordinate outside [0, 1]");
    }
    if (x + w > 1.0 + slack || y + h > 1.0 + slack) {
      throw DomainError("box " + std::to_string(i) + " extends past the image border");
    }
  }
}

Scene Scene::permuted(std::span<const std::size_t> perm) const {
  const std::size_t n = regions(), d = features.cols();
  if (perm.size() != n) throw DimensionError("permutation size does not match region count");
  std::vector<double> f(n * d), b(n * 4);
  for (std::size_t k = 0; k < n; ++k) {
    if (perm[k] >= n) throw IndexError("permutation entry out of range");
    std::copy_n(features.data().begin() + static_cast<std::ptrdiff_t>(perm[k] * d), d, f.begin() + static_cast<std::ptrdiff_t>(k * d));
    std::copy_n(boxes.data().begin() + static_cast<std::ptrdiff_t>(perm[k] * 4), 4, b.begin() + static_cast<std::ptrdiff_t>(k * 4));
  }
  return Scene{Tensor({n, d}, std::move(f)), Tensor({n, 4}, std::move(b))};
}

RegionBatch RegionBatch::from_scenes(std::span<const Scene* const> scenes) {
  if (scenes.empty()) throw DomainError("empty scene batch");
  const std::size_t d = scenes.front()->features.cols();
  std::size_t n = 0;
  for (const Scene* s : scenes) {
    if (s->features.rank() != 2 || s->features.cols() != d) {
      throw DimensionError("scene feature width " + shape_str(s->features.shape()) + " differs from " + std::to_string(d));
    }
    n = std::max(n, s->regions());
  }
  RegionBatch batch;
  batch.groups = scenes.size();
  batch.max_regions = n;
  std::vector<double> f(batch.groups * n * d, 0.0), b(batch.groups * n * 4, 0.0);
  batch.region_mask.assign(batch.groups * n, 0);
  for (std::size_t g = 0; g < batch.groups; ++g) {
    const Scene& s = *scenes[g];
    const std::size_t k = s.regions();
    batch.counts.push_back(k);
    std::copy(s.features.data().begin(), s.features.data().end(), f.begin() + static_cast<std::ptrdiff_t>(g * n * d));
    std::copy(s.boxes.data().begin(), s.boxes.data().end(), b.begin() + static_cast<std::ptrdiff_t>(g * n * 4));
    std::fill_n(batch.region_mask.begin() + static_cast<std::ptrdiff_t>(g * n), k, 1);
  }
  batch.features = Tensor({batch.groups * n, d}, std::move(f));
  batch.boxes = Tensor({batch.groups * n, 4}, std::move(b));
  return batch;
}

RegionBatch RegionBatch::single(const Scene& scene) {
  const Scene* one[] = {&scene};
  return from_scenes(one);
}

std::vector<std::uint8_t> RegionBatch::pair_mask(bool include_self_pairs) const {
  const std::size_t n = max_regions;
  std::vector<std::uint8_t> mask(groups * n * n, 0);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const bool ok = region_mask[g * n + i] && region_mask[g * n + j] && (include_self_pairs || i != j);
        mask[(g * n + i) * n + j] = ok ? 1 : 0;
      }
  return mask;
}

// --- config -------------------------------------------------------------------

void MurelConfig::validate() const {
  if (steps < 1 || steps > 8) throw DataError("MuRel steps must lie in [1, 8], got " + std::to_string(steps));
  if (region_dim == 0 || question_dim == 0) throw DataError("MuRel dimensions must be positive");
  if (answers < 2) throw DataError("answer space needs at least 2 answers");
}

FusionConfig MurelConfig::fusion_config(const std::string& role) const {
  auto make = [](std::size_t a, std::size_t b, std::size_t out, const FusionShape& shape) {
    const std::size_t width = shape.width ? shape.width : std::min<std::size_t>(2 * out, 64);
    return FusionConfig::with_width(a, b, out, width, shape.rank, shape.activation);
  };
  if (role == "qs") return make(region_dim, question_dim, region_dim, qs);
  if (role == "box") return make(4, 4, region_dim, box);
  if (role == "sem") return make(region_dim, region_dim, region_dim, sem);
  if (role == "answer") return make(region_dim, question_dim, answers, answer);
  throw ContractError("unknown fusion role '" + role + "'");
}

// --- cell -----------------------------------------------------------------------

CellParams::CellParams(const MurelConfig& config, Rng& rng) : qs(config.fusion_config("qs"), rng) {
  if (config.pairwise) {
    box.emplace(config.fusion_config("box"), rng);
    sem.emplace(config.fusion_config("sem"), rng);
  }
}

void CellParams::register_params(ParamStore& store, const std::string& prefix) const {
  qs.register_params(store, prefix + ".fusion.qs");
  if (box) box->register_params(store, prefix + ".fusion.box");
  if (sem) sem->register_params(store, prefix + ".fusion.sem");
}

std::size_t CellParams::parameter_count() const {
  return qs.parameter_count() + (box ? box->parameter_count() : 0) + (sem ? sem->parameter_count() : 0);
}

CellOutput murel_cell(const Tensor& state, const RegionBatch& batch, const Tensor& questions, const CellParams& params,
                      const MurelConfig& config, const Tensor* box_relations) {
  const std::size_t n = batch.max_regions;
  if (batch.groups == 0 || n == 0) throw DomainError("MuRel cell needs at least one region");
  if (state.rank() != 2 || state.rows() != batch.groups * n || state.cols() != config.region_dim) {
    throw DimensionError("MuRel cell state has shape " + shape_str(state.shape()) + ", expected [" +
                         std::to_string(batch.groups * n) + " x " + std::to_string(config.region_dim) + "]");
  }
  if (questions.rank() != 2 || questions.rows() != batch.groups || questions.cols() != config.question_dim) {
    throw DimensionError("MuRel cell questions have shape " + shape_str(questions.shape()) + ", expected [" +
                         std::to_string(batch.groups) + " x " + std::to_string(config.question_dim) + "]");
  }

  CellTrace trace;
  trace.groups = batch.groups;
  trace.max_regions = n;
  trace.region_mask = batch.region_mask;
  trace.state_in = state;
  trace.multimodal = params.qs.fuse_rows(state, questions, n);

  if (config.pairwise) {
    if (!params.box || !params.sem) throw ContractError("pairwise MuRel cell is missing its pairwise fusions");
    Tensor spatial = box_relations ? *box_relations : params.box->fuse_pairs(batch.boxes, batch.boxes, n);
    Tensor semantic = params.sem->fuse_pairs(trace.multimodal, trace.multimodal, n);
    trace.relations = add(spatial, semantic);
    const auto mask = batch.pair_mask(config.include_self_pairs);
    MaxResult ctx = segment_max(trace.relations, n, mask);
    trace.context = ctx.values;
    trace.context_source = std::move(ctx.argmax);
    trace.update = add(trace.multimodal, trace.context);
  } else {
    trace.update = trace.multimodal;
  }
  trace.state = add(state, trace.update);
  Tensor next = trace.state;
  return {std::move(next), std::move(trace)};
}

// --- network -------------------------------------------------------------------

MurelNet::MurelNet(MurelConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t count = config_.shared_weights ? 1 : config_.steps;
  for (std::size_t t = 0; t < count; ++t) cells_.emplace_back(config_, rng);
  head_ = Fusion(config_.fusion_config("answer"), rng);
}

ForwardOutput MurelNet::forward(const RegionBatch& batch, const Tensor& questions, bool keep_traces) const {
  ForwardOutput out;
  Tensor state = batch.features;
  Tensor cached_boxes;
  if (config_.pairwise && config_.shared_weights) {
    // Theta_b only sees boxes, so with shared weights the spatial term is identical at every step.
    cached_boxes = cells_.front().box->fuse_pairs(batch.boxes, batch.boxes, batch.max_regions);
  }
  for (std::size_t t = 0; t < config_.steps; ++t) {
    const CellParams& cell = config_.shared_weights ? cells_.front() : cells_[t];
    CellOutput step = murel_cell(state, batch, questions, cell, config_, cached_boxes.defined() ? &cached_boxes : nullptr);
    state = std::move(step.state);
    if (keep_traces) out.traces.push_back(std::move(step.trace));
  }
  Tensor pooled = segment_max(state, batch.max_regions, batch.region_mask).values;
  out.scores = head_.fuse_rows(pooled, questions, 1);
  return out;
}

void MurelNet::register_params(ParamStore& store, const std::string& prefix) const {
  if (config_.shared_weights) {
    cells_.front().register_params(store, prefix + ".cell");
  } else {
    for (std::size_t t = 0; t < cells_.size(); ++t) cells_[t].register_params(store, prefix + ".cell." + std::to_string(t + 1));
  }
  head_.register_params(store, prefix + ".head.fusion.answer");
}

std::size_t MurelNet::cell_parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : cells_) n += c.parameter_count();
  return n;
}

std::size_t MurelNet::parameter_count() const { return cell_parameter_count() + head_.parameter_count(); }

ForwardOutput murel_forward(const Scene& scene, const Tensor& q, const MurelNet& net) {
  scene.validate();
  if (q.rank() != 1) throw DimensionError("murel_forward: question embedding must be a vector");
  ForwardOutput out = net.forward(RegionBatch::single(scene), reshape(q, {1, q.size()}), true);
  out.scores = reshape(out.scores, {out.scores.size()});
  return out;
}

// --- attention baseline ------------------------------------------------------

void AttentionConfig::validate() const {
  if (region_dim == 0 || question_dim == 0 || glimpses == 0 || width == 0 || rank == 0) {
    throw DataError("attention config has a zero dimension");
  }
  if (answers < 2) throw DataError("answer space needs at least 2 answers");
}

static FusionConfig attention_fusion_config(const AttentionConfig& c) {
  return FusionConfig::with_width(c.region_dim, c.question_dim, c.width, c.width, c.rank);
}

static FusionConfig attention_head_config(const AttentionConfig& c) {
  const std::size_t width = c.answer.width ? c.answer.width : std::min<std::size_t>(2 * c.answers, 64);
  return FusionConfig::with_width(c.glimpses * c.region_dim, c.question_dim, c.answers, width, c.answer.rank,
                                  c.answer.activation);
}

std::size_t AttentionConfig::parameter_count() const {
  return attention_fusion_config(*this).parameter_count() + width * glimpses + attention_head_config(*this).parameter_count();
}

AttentionBaseline::AttentionBaseline(AttentionConfig config, Rng& rng) : config_(config) {
  config_.validate();
  attention = Fusion(attention_fusion_config(config_), rng);
  glimpse_weights = glorot(config_.width, config_.glimpses, rng);
  head = Fusion(attention_head_config(config_), rng);
}

AttentionOutput AttentionBaseline::forward(const RegionBatch& batch, const Tensor& questions) const {
  const std::size_t n = batch.max_regions;
  if (batch.features.cols() != config_.region_dim) {
    throw DimensionError("attention baseline: region width " + std::to_string(batch.features.cols()) + " != " +
                         std::to_string(config_.region_dim));
  }
  Tensor att = attention.fuse_rows(batch.features, questions, n);
  Tensor logits = matmul(att, glimpse_weights);
  AttentionOutput out;
  out.alpha = segment_softmax(logits, n, batch.region_mask);
  Tensor pooled = segment_weighted_sum(out.alpha, batch.features, n);
  out.scores = head.fuse_rows(pooled, questions, 1);
  return out;
}

void AttentionBaseline::register_params(ParamStore& store, const std::string& prefix) const {
  attention.register_params(store, prefix + ".fusion.att");
  store.add(prefix + ".glimpses", glimpse_weights);
  head.register_params(store, prefix + ".head.fusion.answer");
}

AttentionConfig matched_attention_config(const MurelConfig& murel, std::size_t target) {
  AttentionConfig best;
  best.region_dim = murel.region_dim;
  best.question_dim = murel.question_dim;
  best.answers = murel.answers;
  best.answer = murel.answer;
  std::size_t best_gap = static_cast<std::size_t>(-1);
  for (std::size_t width = 4; width <= 512; ++width) {
    AttentionConfig c = best;
    c.width = width;
    const std::size_t count = c.parameter_count();
    const std::size_t gap = count > target ? count - target : target - count;
    if (gap < best_gap) {
      best_gap = gap;
      best.width = width;
    }
  }
  return best;
}

AttentionOutput attention_baseline_forward(const Scene& scene, const Tensor& q, const AttentionBaseline& model) {
  scene.validate();
  if (q.rank() != 1) throw DimensionError("attention_baseline_forward: question embedding must be a vector");
  AttentionOutput out = model.forward(RegionBatch::single(scene), reshape(q, {1, q.size()}));
  out.scores = reshape(out.scores, {out.scores.size()});
  return out;
}

// --- answers -----------------------------------------------------------------

AnswerSpace::AnswerSpace(std::vector<std::string> answers) : answers_(std::move(answers)) {
  if (answers_.size() < 2) throw DataError("answer space needs at least 2 answers");
  for (std::size_t i = 1; i < answers_.size(); ++i)
    if (std::find(answers_.begin(), answers_.begin() + i, answers_[i]) != answers_.begin() + i)
      throw DataError("answer '" + answers_[i] + "' appears twice");
}

const std::string& AnswerSpace::answer(std::size_t i) const {
  if (i >= answers_.size()) throw IndexError("answer index " + std::to_string(i) + " out of range");
  return answers_[i];
}

std::size_t AnswerSpace::index(const std::string& answer) const {
  auto it = std::find(answers_.begin(), answers_.end(), answer);
  if (it == answers_.end()) throw IndexError("answer '" + answer + "' not in answer space");
  return static_cast<std::size_t>(it - answers_.begin());
}

bool AnswerSpace::contains(const std::string& answer) const {
  return std::find(answers_.begin(), answers_.end(), answer) != answers_.end();
}

std::size_t argmax_index(std::span<const double> scores) {
  if (scores.empty()) throw DomainError("argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

std::string predict(std::span<const double> scores, const AnswerSpace& answers) {
  if (scores.size() != answers.size()) {
    throw DimensionError("predict: " + std::to_string(scores.size()) + " scores for " + std::to_string(answers.size()) +
                         " answers");
  }
  return answers.answer(argmax_index(scores));
}

}  // namespace murel
