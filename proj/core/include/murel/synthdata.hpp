#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "murel/murel.hpp"
#include "murel/qencoder.hpp"

namespace murel::synth {

enum class ShapeKind { circle, square, triangle };
enum class Color { red, green, blue, yellow };
enum class Size { small, large };
enum class Relation { left_of, right_of, above, below };
enum class Attribute { shape, color, size };
enum class Family { attribute, relation, existence, count };

inline constexpr std::array kShapes{ShapeKind::circle, ShapeKind::square, ShapeKind::triangle};
inline constexpr std::array kColors{Color::red, Color::green, Color::blue, Color::yellow};
inline constexpr std::array kSizes{Size::small, Size::large};
inline constexpr std::array kRelations{Relation::left_of, Relation::right_of, Relation::above, Relation::below};
inline constexpr std::array kFamilies{Family::attribute, Family::relation, Family::existence, Family::count};

std::string name(ShapeKind s);
std::string plural(ShapeKind s);
std::string name(Color c);
std::string name(Size s);
std::string name(Relation r);  // "left of", "right of", "above", "below"
std::string name(Attribute a);
std::string name(Family f);
Family family_from_string(const std::string& s);

/// Margin applied to every spatial predicate.
inline constexpr double kSpatialMargin = 0.05;
/// Minimum distance between object centers.
inline constexpr double kMinCenterDistance = 0.08;
inline constexpr double kSmallHalfExtent = 0.05;
inline constexpr double kLargeHalfExtent = 0.09;
/// Standard deviation of the Gaussian noise added to region features.
inline constexpr double kFeatureNoise = 0.05;
/// One-hot shape, color, size plus (cx, cy, w, h).
inline constexpr std::size_t kSymbolicFeatureDim = 3 + 4 + 2 + 4;

struct Object {
  ShapeKind shape;
  Color color;
  Size size;
  double cx;
  double cy;
  double half_extent;

  std::array<double, 4> box() const { return {cx - half_extent, cy - half_extent, 2 * half_extent, 2 * half_extent}; }
};

struct SymbolicScene {
  std::vector<Object> objects;
  std::uint64_t seed = 0;
};

/// Referent description: any unset slot is unconstrained.
struct Description {
  std::optional<ShapeKind> shape;
  std::optional<Color> color;
  std::optional<Size> size;

  bool matches(const Object& o) const;
  /// "small red circle", "blue object", ...
  std::string phrase() const;
};

/// A parsed question template with its slots filled.
struct Question {
  Family family = Family::attribute;
  Attribute queried = Attribute::color;  // attribute and relation families
  Description subject;                   // referent / counted set / existence target
  Relation relation = Relation::left_of;  // relation family
  Description anchor;                    // relation family

  std::string text() const;
};

/// Spatial predicate "a <relation> b" with the margin.
bool holds(Relation relation, const Object& a, const Object& b);

/// Exact symbolic answer. An ambiguous referent resolves to its lowest-index match; the samplers
/// never emit one. Throws DomainError when a referent is missing or a count exceeds 3.
std::string oracle_answer(const SymbolicScene& scene, const Question& question);

struct QAItem {
  std::size_t scene_id = 0;
  std::string question;
  Family family = Family::attribute;
  std::string answer;
};

struct GeneratorConfig {
  std::size_t max_objects = 8;  // N_max
  std::size_t min_objects = 2;
  std::size_t region_dim = 32;  // d_v
  /// Relative frequency of each family in the emitted questions.
  std::map<Family, double> family_weights{
      {Family::attribute, 0.2}, {Family::relation, 0.4}, {Family::existence, 0.2}, {Family::count, 0.2}};
};

/// One emitted record: the scene's regions inline plus the question.
struct Record {
  std::size_t scene_id = 0;
  std::vector<std::vector<double>> features;  // N x d_v
  std::vector<std::array<double, 4>> boxes;   // N x 4
  std::string question;
  std::string answer;
  Family family = Family::attribute;
};

struct DatasetStats {
  std::size_t scenes = 0;
  std::size_t items = 0;
  std::map<std::string, std::size_t> family_counts;
  std::map<std::string, std::map<std::string, std::size_t>> answer_counts;  // family -> answer -> count
  std::size_t rejected_questions = 0;
};

struct Dataset {
  std::vector<Record> records;
  Vocabulary vocab;
  AnswerSpace answers;
  DatasetStats stats;
  std::uint64_t seed = 0;
  GeneratorConfig config;
};

/// The closed answer vocabulary: shapes, colors, sizes, yes/no, 0..3.
AnswerSpace answer_space();
/// Every word any template can produce, in a fixed order.
Vocabulary question_vocabulary();

SymbolicScene sample_scene(Rng& rng, const GeneratorConfig& config);
std::vector<std::vector<double>> region_features(const SymbolicScene& scene, Rng& rng, std::size_t region_dim);

/// Samples a question of `family` with a well-defined answer, or nullopt after too many rejections.
std::optional<Question> sample_question(const SymbolicScene& scene, Family family, Rng& rng);

/// Deterministic in (n_scenes, questions_per_scene, seed, config).
Dataset generate_dataset(std::size_t n_scenes, std::size_t questions_per_scene, std::uint64_t seed,
                         const GeneratorConfig& config = {});

/// Scene of a record as model input.
Scene to_scene(const Record& record);

/// One JSON line per record; stable key order and number formatting.
std::string record_to_jsonl(const Record& record);
Record record_from_json(const std::string& line);
std::string dataset_to_jsonl(const Dataset& dataset);
/// Sidecar JSON: vocab, answer space, generation stats.
std::string sidecar_json(const Dataset& dataset, const std::map<std::string, double>& extra = {});

void write_dataset(const Dataset& dataset, const std::string& jsonl_path, const std::string& sidecar_path,
                   const std::map<std::string, double>& extra = {});
/// Reads a JSONL dataset and its sidecar (path + ".meta.json" unless given).
Dataset read_dataset(const std::string& jsonl_path, const std::string& sidecar_path = "");
std::string default_sidecar_path(const std::string& jsonl_path);

/// Logistic-regression probe on mean-pooled region features plus a bag of question words.
/// Returns held-out accuracy per family; reported, never asserted.
std::map<std::string, double> linear_probe_accuracy(const Dataset& dataset, std::uint64_t seed, std::size_t epochs = 30);

}  // namespace murel::synth
