#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "murel/fusion.hpp"
#include "murel/params.hpp"
#include "murel/tensor.hpp"

namespace murel {

/// N region features with normalized [x, y, w, h] boxes.
struct Scene {
  Tensor features;  // [N x d_v]
  Tensor boxes;     // [N x 4]

  std::size_t regions() const { return features.rows(); }
  /// Throws DomainError / DimensionError when the scene violates its invariants.
  void validate() const;
  /// Rows of features and boxes reordered: result row k = row perm[k].
  Scene permuted(std::span<const std::size_t> perm) const;
};

/// Scenes padded to a common region count. Row (g, i) lives at g * max_regions + i.
struct RegionBatch {
  std::size_t groups = 0;
  std::size_t max_regions = 0;
  Tensor features;                       // [G*N x d_v]
  Tensor boxes;                          // [G*N x 4]
  std::vector<std::uint8_t> region_mask;  // 1 for real regions
  std::vector<std::size_t> counts;

  static RegionBatch from_scenes(std::span<const Scene* const> scenes);
  static RegionBatch single(const Scene& scene);

  /// Validity of pair row (g, i, j): both regions real, and i != j unless self pairs are on.
  std::vector<std::uint8_t> pair_mask(bool include_self_pairs) const;
};

/// Width and rank overrides for one fusion role; width 0 picks min(2 * out, 64).
struct FusionShape {
  std::size_t width = 0;
  std::size_t rank = 5;
  Activation activation = Activation::tanh;
};

struct MurelConfig {
  std::size_t steps = 3;  // T
  std::size_t region_dim = 32;  // d_v
  std::size_t question_dim = 16;  // d_q
  std::size_t answers = 2;
  bool pairwise = true;
  bool include_self_pairs = true;
  bool shared_weights = true;
  FusionShape qs, box, sem;
  /// Linear so the max-pooled state, whose scale grows with the pairwise term, cannot saturate the head.
  FusionShape answer{0, 5, Activation::linear};

  void validate() const;
  FusionConfig fusion_config(const std::string& role) const;
};

/// Per-step values kept for visualization and tests. Relations and context are
/// undefined when the pairwise module is disabled.
struct CellTrace {
  std::size_t groups = 0;
  std::size_t max_regions = 0;
  std::vector<std::uint8_t> region_mask;
  Tensor state_in;    // s^{t-1}  [G*N x d_v]
  Tensor multimodal;  // m        [G*N x d_v]
  Tensor relations;   // r        [G*N*N x d_v]
  Tensor context;     // e        [G*N x d_v]
  std::vector<std::int32_t> context_source;  // argmax_j per (g, i, k); -1 if no pair
  Tensor update;      // x        [G*N x d_v]
  Tensor state;       // s^t      [G*N x d_v]
  bool pairwise() const { return relations.defined(); }
};

/// Parameter set of one MuRel cell (Theta, Theta_b, Theta_m).
struct CellParams {
  Fusion qs;
  std::optional<Fusion> box;
  std::optional<Fusion> sem;

  CellParams() = default;
  CellParams(const MurelConfig& config, Rng& rng);
  void register_params(ParamStore& store, const std::string& prefix) const;
  std::size_t parameter_count() const;
};

struct CellOutput {
  Tensor state;
  CellTrace trace;
};

/// One MuRel cell: m_i = B(s_i, q), r_ij = B(b_i, b_j) + B(m_i, m_j), e_i = max_j r_ij,
/// x_i = m_i + e_i, s'_i = s_i + x_i. `box_relations`, when given, replaces B(b_i, b_j).
CellOutput murel_cell(const Tensor& state, const RegionBatch& batch, const Tensor& questions, const CellParams& params,
                      const MurelConfig& config, const Tensor* box_relations = nullptr);

struct ForwardOutput {
  Tensor scores;  // [G x |A|]
  std::vector<CellTrace> traces;
};

/// Iterated MuRel cell, global max pooling and the answer fusion.
class MurelNet {
 public:
  MurelNet() = default;
  MurelNet(MurelConfig config, Rng& rng);

  const MurelConfig& config() const { return config_; }
  const std::vector<CellParams>& cells() const { return cells_; }
  const Fusion& head() const { return head_; }
  std::vector<CellParams>& mutable_cells() { return cells_; }
  Fusion& mutable_head() { return head_; }

  ForwardOutput forward(const RegionBatch& batch, const Tensor& questions, bool keep_traces = false) const;
  void register_params(ParamStore& store, const std::string& prefix = "murel") const;

  std::size_t parameter_count() const;
  std::size_t cell_parameter_count() const;

 private:
  MurelConfig config_;
  std::vector<CellParams> cells_;
  Fusion head_;
};

/// Single-scene convenience wrapper: q is [d_q], result scores are [|A|].
ForwardOutput murel_forward(const Scene& scene, const Tensor& q, const MurelNet& net);

struct AttentionConfig {
  std::size_t region_dim = 32;
  std::size_t question_dim = 16;
  std::size_t answers = 2;
  std::size_t glimpses = 2;
  std::size_t width = 64;  // attention fusion t_a = t_b = d_h = output
  std::size_t rank = 5;
  FusionShape answer{0, 5, Activation::linear};

  void validate() const;
  std::size_t parameter_count() const;
};

struct AttentionOutput {
  Tensor scores;  // [G x |A|]
  Tensor alpha;   // [G*N x glimpses]
};

/// Multi-glimpse soft attention over regions followed by the same answer fusion:
/// alpha = softmax_i(B(v_i, q) w), v = sum_i alpha_i v_i per glimpse, y = B([v_1; v_2], q).
class AttentionBaseline {
 public:
  AttentionBaseline() = default;
  AttentionBaseline(AttentionConfig config, Rng& rng);

  const AttentionConfig& config() const { return config_; }
  AttentionOutput forward(const RegionBatch& batch, const Tensor& questions) const;
  void register_params(ParamStore& store, const std::string& prefix = "baseline") const;
  std::size_t parameter_count() const { return config_.parameter_count(); }

  Fusion attention;
  Tensor glimpse_weights;  // [width x glimpses]
  Fusion head;

 private:
  AttentionConfig config_;
};

/// Attention config whose parameter count is closest to `target`.
AttentionConfig matched_attention_config(const MurelConfig& murel, std::size_t target);

AttentionOutput attention_baseline_forward(const Scene& scene, const Tensor& q, const AttentionBaseline& model);

/// Closed answer vocabulary of the classifier.
class AnswerSpace {
 public:
  AnswerSpace() = default;
  explicit AnswerSpace(std::vector<std::string> answers);

  std::size_t size() const { return answers_.size(); }
  const std::string& answer(std::size_t i) const;
  std::size_t index(const std::string& answer) const;  // IndexError when absent
  bool contains(const std::string& answer) const;
  const std::vector<std::string>& answers() const { return answers_; }

 private:
  std::vector<std::string> answers_;
};

/// Index of the highest score; lowest index wins ties.
std::size_t argmax_index(std::span<const double> scores);
std::string predict(std::span<const double> scores, const AnswerSpace& answers);

}  // namespace murel
