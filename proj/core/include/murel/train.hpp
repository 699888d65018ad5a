#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "murel/murel.hpp"
#include "murel/optim.hpp"
#include "murel/qencoder.hpp"
#include "murel/synthdata.hpp"

namespace murel {

using ordered_json = nlohmann::ordered_json;

enum class Variant { murel, attention_baseline };
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  Variant variant = Variant::murel;
  /// region_dim, question_dim and answers are overwritten from the dataset and encoder.
  MurelConfig model;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 16;  // d_q
  /// Attention fusion width; 0 matches the MuRel parameter count.
  std::size_t attention_width = 0;
  /// Validation is evaluated every `report_every` epochs and after the last one.
  std::size_t report_every = 1;
  /// Batches hold scenes with equal region counts, which skips padded pairs.
  bool bucket_by_regions = true;
  /// Train on the first `train_limit` training items only (0 = all).
  std::size_t train_limit = 0;

  void validate() const;
};

ordered_json to_json(const MurelConfig& c);
MurelConfig murel_config_from_json(const ordered_json& j, MurelConfig base = {});
ordered_json to_json(const TrainConfig& c);
/// Fields absent from `j` keep their value from `base`; unknown keys and invalid values are a DataError.
TrainConfig train_config_from_json(const ordered_json& j, TrainConfig base = {});

/// 16 hex digits of FNV-1a over the canonical JSON text.
std::string fnv1a_hex(const std::string& text);
std::string config_hash(const TrainConfig& c);

/// Encoder plus one of the two answer models, with the parameters registered in a single store.
class Model {
 public:
  Model() = default;
  Model(const TrainConfig& config, const Vocabulary& vocab, const AnswerSpace& answers, std::size_t region_dim);

  Variant variant() const { return variant_; }
  const Vocabulary& vocab() const { return vocab_; }
  const AnswerSpace& answers() const { return answers_; }
  const QuestionEncoder& encoder() const { return encoder_; }
  const MurelNet& murel() const { return murel_; }
  const AttentionBaseline& baseline() const { return baseline_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  std::size_t parameter_count() const { return store_.parameter_count(); }
  /// Parameters excluding the question encoder.
  std::size_t answer_model_parameter_count() const;

  /// Scores [G x |A|]; MuRel traces land in `traces` when given.
  Tensor forward(const RegionBatch& batch, const std::vector<std::vector<std::size_t>>& tokens,
                 std::vector<CellTrace>* traces = nullptr) const;

  /// Architecture, vocabulary and answer space; the checkpoint holds the values.
  ordered_json describe() const;
  static Model from_description(const ordered_json& j);

 private:
  Variant variant_ = Variant::murel;
  std::uint64_t seed_ = 0;
  std::size_t region_dim_ = 0;
  GruConfig gru_;
  MurelConfig murel_config_;
  AttentionConfig attention_config_;
  Vocabulary vocab_;
  AnswerSpace answers_;
  QuestionEncoder encoder_;
  MurelNet murel_;
  AttentionBaseline baseline_;
  ParamStore store_;

  void build();
};

/// Writes model.json and checkpoint.json into `dir`.
void save_model(const Model& model, const std::string& dir);
/// Loads from a checkpoint path whose directory holds model.json.
Model load_model(const std::string& checkpoint_path);

struct Split {
  std::vector<std::size_t> train, validation, test;
};
/// 80/10/10 by scene after a seeded shuffle; all questions of a scene share a split.
Split split_by_scene(const synth::Dataset& dataset, std::uint64_t seed);

struct EvalReport {
  std::size_t items = 0;
  std::size_t correct = 0;
  double overall = 0.0;
  std::map<std::string, std::size_t> family_items;
  std::map<std::string, std::size_t> family_correct;
  std::map<std::string, double> per_family;
  /// truth -> predicted -> count
  std::map<std::string, std::map<std::string, std::size_t>> confusion;
  double wall_seconds = 0.0;

  double family_accuracy(const std::string& family) const;
};
ordered_json to_json(const EvalReport& r, bool include_timing = false);

/// Prepared model inputs for every record, so scenes are tensorized once.
struct PreparedData {
  std::vector<Scene> scenes;
  std::vector<std::vector<std::size_t>> tokens;
  std::vector<std::size_t> targets;
};
PreparedData prepare(const synth::Dataset& dataset, const Vocabulary& vocab, const AnswerSpace& answers);

EvalReport evaluate(const Model& model, const synth::Dataset& dataset, const PreparedData& data,
                    const std::vector<std::size_t>& indices, std::size_t batch_size = 64);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> validation_accuracy;
};

struct TrainResult {
  Model model;  // best-validation parameters
  TrainConfig config;
  Split split;
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;  // 0 = initialization
  EvalReport validation;
  EvalReport test;
  double wall_seconds = 0.0;
};
/// Deterministic report body: config echo, history, validation and test reports.
ordered_json to_json(const TrainResult& r);

using ProgressFn = std::function<void(const std::string&)>;

/// Adam on mean cross-entropy with per-epoch validation; keeps the best-validation parameters.
/// Throws Error naming the first non-finite tensor if the loss stops being finite.
TrainResult train(const synth::Dataset& dataset, const TrainConfig& config, const ProgressFn& progress = {});

/// Accuracy of `model` on the given items of `dataset`.
double accuracy_on(const Model& model, const synth::Dataset& dataset, const std::vector<std::size_t>& indices);

struct AblationRun {
  bool pairwise = true;
  std::size_t steps = 3;
  std::uint64_t seed = 0;
  Variant variant = Variant::murel;
  std::size_t parameter_count = 0;
  std::string hash;
  EvalReport validation;
};

struct AblationRow {
  std::string group;  // "grid" or "sweep"
  std::string label;
  Variant variant = Variant::murel;
  bool pairwise = true;
  std::size_t steps = 3;
  std::size_t parameter_count = 0;
  std::vector<std::uint64_t> seeds;
  std::map<std::string, std::vector<double>> accuracy;  // "overall" and each family, one per seed
  double mean(const std::string& key) const;
  double stddev(const std::string& key) const;  // population standard deviation
};

struct AblationTable {
  std::vector<AblationRow> rows;  // 4 grid rows then 4 sweep rows
  AblationRow attention;          // attention baseline on the same seeds
  std::vector<AblationRun> runs;  // unique trained configurations
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t jobs = 1;
  bool include_attention = true;
  /// Called after each run finishes with its directory-safe hash; may write per-run outputs.
  std::function<void(const TrainResult&, const std::string&)> on_run;
};

/// Pairwise on/off x T in {1, 3} plus the T in {1, 2, 3, 4} sweep with pairwise on; shared cells
/// are trained once.
AblationTable run_ablation_grid(const synth::Dataset& dataset, const TrainConfig& base, const AblationOptions& options,
                                const ProgressFn& progress = {});

ordered_json to_json(const AblationTable& t, const TrainConfig& base);
std::string ablation_tsv(const AblationTable& t);
std::string ablation_text(const AblationTable& t);

}  // namespace murel
