#include "murel/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "murel/errors.hpp"

namespace murel::synth {

using ordered_json = nlohmann::ordered_json;

// --- names ---------------------------------------------------------------------

std::string name(ShapeKind s) {
  switch (s) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

std::string plural(ShapeKind s) { return name(s) + "s"; }

std::string name(Color c) {
  switch (c) {
    case Color::red: return "red";
    case Color::green: return "green";
    case Color::blue: return "blue";
    case Color::yellow: return "yellow";
  }
  return "?";
}

std::string name(Size s) { return s == Size::small ? "small" : "large"; }

std::string name(Relation r) {
  switch (r) {
    case Relation::left_of: return "left of";
    case Relation::right_of: return "right of";
    case Relation::above: return "above";
    case Relation::below: return "below";
  }
  return "?";
}

std::string name(Attribute a) {
  switch (a) {
    case Attribute::shape: return "shape";
    case Attribute::color: return "color";
    case Attribute::size: return "size";
  }
  return "?";
}

std::string name(Family f) {
  switch (f) {
    case Family::attribute: return "attribute";
    case Family::relation: return "relation";
    case Family::existence: return "existence";
    case Family::count: return "count";
  }
  return "?";
}

Family family_from_string(const std::string& s) {
  for (auto f : kFamilies)
    if (name(f) == s) return f;
  throw DataError("unknown question family '" + s + "'");
}

// --- predicates ------------------------------------------------------------------

bool Description::matches(const Object& o) const {
  return (!shape || *shape == o.shape) && (!color || *color == o.color) && (!size || *size == o.size);
}

std::string Description::phrase() const {
  std::string out;
  if (size) out += name(*size) + " ";
  if (color) out += name(*color) + " ";
  out += shape ? name(*shape) : "object";
  return out;
}

bool holds(Relation relation, const Object& a, const Object& b) {
  // Centers differing by exactly the margin never satisfy the strict predicate, whatever the rounding.
  constexpr double m = kSpatialMargin + 1e-9;
  switch (relation) {
    case Relation::left_of: return a.cx < b.cx - m;
    case Relation::right_of: return a.cx > b.cx + m;
    case Relation::above: return a.cy < b.cy - m;
    case Relation::below: return a.cy > b.cy + m;
  }
  return false;
}

static std::string attribute_value(const Object& o, Attribute a) {
  switch (a) {
    case Attribute::shape: return name(o.shape);
    case Attribute::color: return name(o.color);
    case Attribute::size: return name(o.size);
  }
  return "?";
}

std::string Question::text() const {
  switch (family) {
    case Family::attribute:
      return "what " + name(queried) + " is the " + subject.phrase() + "?";
    case Family::relation:
      return "what " + name(queried) + " is the object " + name(relation) + " the " + anchor.phrase() + "?";
    case Family::existence:
      return "is there a " + subject.phrase() + "?";
    case Family::count: {
      std::string noun = subject.shape ? plural(*subject.shape) : "objects";
      std::string head;
      if (subject.size) head += name(*subject.size) + " ";
      if (subject.color) head += name(*subject.color) + " ";
      return "how many " + head + noun + " are there?";
    }
  }
  return "";
}

static std::vector<std::size_t> matching(const SymbolicScene& scene, const Description& d) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scene.objects.size(); ++i)
    if (d.matches(scene.objects[i])) out.push_back(i);
  return out;
}

static std::size_t first_referent(const SymbolicScene& scene, const Description& d) {
  auto m = matching(scene, d);
  if (m.empty()) throw DomainError("no object matches '" + d.phrase() + "'");
  return m.front();
}

std::string oracle_answer(const SymbolicScene& scene, const Question& question) {
  switch (question.family) {
    case Family::attribute: {
      const auto i = first_referent(scene, question.subject);
      return attribute_value(scene.objects[i], question.queried);
    }
    case Family::relation: {
      const auto a = first_referent(scene, question.anchor);
      std::vector<std::size_t> hits;
      for (std::size_t i = 0; i < scene.objects.size(); ++i)
        if (i != a && holds(question.relation, scene.objects[i], scene.objects[a])) hits.push_back(i);
      if (hits.empty()) throw DomainError("no object is " + name(question.relation) + " the anchor");
      return attribute_value(scene.objects[hits.front()], question.queried);
    }
    case Family::existence:
      return matching(scene, question.subject).empty() ? "no" : "yes";
    case Family::count: {
      const auto n = matching(scene, question.subject).size();
      if (n > 3) throw DomainError("count above the answer range");
      return std::to_string(n);
    }
  }
  throw ContractError("unknown question family");
}

// --- vocabularies --------------------------------------------------------------

AnswerSpace answer_space() {
  std::vector<std::string> a;
  for (auto s : kShapes) a.push_back(name(s));
  for (auto c : kColors) a.push_back(name(c));
  for (auto s : kSizes) a.push_back(name(s));
  for (const char* x : {"yes", "no", "0", "1", "2", "3"}) a.emplace_back(x);
  return AnswerSpace(std::move(a));
}

Vocabulary question_vocabulary() {
  Vocabulary v;
  for (const char* w : {"what", "is", "the", "object", "objects", "there", "a", "how", "many", "are", "color", "shape",
                        "size", "left", "right", "of", "above", "below"}) {
    v.add(w);
  }
  for (auto s : kShapes) {
    v.add(name(s));
    v.add(plural(s));
  }
  for (auto c : kColors) v.add(name(c));
  for (auto s : kSizes) v.add(name(s));
  return v;
}

// --- sampling ------------------------------------------------------------------

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

template <typename T, std::size_t N>
T pick(const std::array<T, N>& options, Rng& rng) {
  return options[rng.index(N)];
}

// Dividing an integer by an exact power of ten yields the double nearest the decimal.
double round_decimals(double v, double scale) { return std::round(v * scale) / scale; }

}  // namespace

SymbolicScene sample_scene(Rng& rng, const GeneratorConfig& config) {
  if (config.min_objects < 2 || config.max_objects < config.min_objects) {
    throw DataError("scene object range must satisfy 2 <= min <= max");
  }
  const std::size_t n = config.min_objects + rng.index(config.max_objects - config.min_objects + 1);
  for (;;) {
    SymbolicScene scene;
    bool failed = false;
    for (std::size_t k = 0; k < n && !failed; ++k) {
      Object o{pick(kShapes, rng), pick(kColors, rng), pick(kSizes, rng), 0.0, 0.0, 0.0};
      o.half_extent = o.size == Size::small ? kSmallHalfExtent : kLargeHalfExtent;
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        // Centers on a 1e-3 grid keep every box coordinate short and exact enough to print.
        const int lo = static_cast<int>(std::lround(o.half_extent * 1000.0));
        const int hi = 1000 - lo;
        o.cx = (lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1)))) / 1000.0;
        o.cy = (lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1)))) / 1000.0;
        placed = std::all_of(scene.objects.begin(), scene.objects.end(), [&](const Object& p) {
          return std::hypot(p.cx - o.cx, p.cy - o.cy) >= kMinCenterDistance;
        });
      }
      if (!placed) failed = true;
      scene.objects.push_back(o);
    }
    if (!failed) return scene;
  }
}

std::vector<std::vector<double>> region_features(const SymbolicScene& scene, Rng& rng, std::size_t region_dim) {
  if (region_dim < kSymbolicFeatureDim) {
    throw DataError("region_dim must be at least " + std::to_string(kSymbolicFeatureDim));
  }
  std::vector<std::vector<double>> out;
  for (const auto& o : scene.objects) {
    std::vector<double> f(region_dim, 0.0);
    f[static_cast<std::size_t>(o.shape)] = 1.0;
    f[3 + static_cast<std::size_t>(o.color)] = 1.0;
    f[7 + static_cast<std::size_t>(o.size)] = 1.0;
    const auto b = o.box();
    f[9] = o.cx;
    f[10] = o.cy;
    f[11] = b[2];
    f[12] = b[3];
    for (auto& v : f) v = round_decimals(v + rng.normal(0.0, kFeatureNoise), 1e6);
    out.push_back(std::move(f));
  }
  return out;
}

namespace {

std::optional<Question> sample_attribute(const SymbolicScene& scene, Rng& rng) {
  for (int attempt = 0; attempt < 30; ++attempt) {
    const auto& o = scene.objects[rng.index(scene.objects.size())];
    Question q;
    q.family = Family::attribute;
    q.queried = std::array{Attribute::shape, Attribute::color, Attribute::size}[rng.index(3)];
    std::vector<Description> candidates;
    switch (q.queried) {
      case Attribute::color:
        candidates = {{o.shape, std::nullopt, std::nullopt}, {o.shape, std::nullopt, o.size}};
        break;
      case Attribute::shape:
        candidates = {{std::nullopt, o.color, std::nullopt}, {std::nullopt, o.color, o.size}};
        break;
      case Attribute::size:
        candidates = {{o.shape, std::nullopt, std::nullopt}, {o.shape, o.color, std::nullopt}};
        break;
    }
    std::vector<Description> unique;
    for (const auto& d : candidates)
      if (matching(scene, d).size() == 1) unique.push_back(d);
    if (unique.empty()) continue;
    q.subject = unique[rng.index(unique.size())];
    return q;
  }
  return std::nullopt;
}

std::optional<Question> sample_relation(const SymbolicScene& scene, Rng& rng) {
  for (int attempt = 0; attempt < 40; ++attempt) {
    const std::size_t a = rng.index(scene.objects.size());
    const auto& anchor = scene.objects[a];
    Question q;
    q.family = Family::relation;
    q.anchor = Description{anchor.shape, anchor.color, std::nullopt};
    if (matching(scene, q.anchor).size() != 1) continue;
    q.relation = pick(kRelations, rng);
    q.queried = std::array{Attribute::shape, Attribute::color, Attribute::size}[rng.index(3)];
    std::vector<std::size_t> hits;
    std::set<std::string> values;
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      if (i == a) continue;
      values.insert(attribute_value(scene.objects[i], q.queried));
      if (holds(q.relation, scene.objects[i], anchor)) hits.push_back(i);
    }
    // Exactly one target, and the answer must not follow from the other objects alone.
    if (hits.size() != 1 || values.size() < 2) continue;
    return q;
  }
  return std::nullopt;
}

std::optional<Question> sample_existence(const SymbolicScene& scene, Rng& rng) {
  const bool want_yes = rng.index(2) == 0;
  for (int attempt = 0; attempt < 60; ++attempt) {
    Question q;
    q.family = Family::existence;
    const int form = static_cast<int>(rng.index(3));
    Description d{pick(kShapes, rng), std::nullopt, std::nullopt};
    if (form != 1) d.color = pick(kColors, rng);
    if (form != 0) d.size = pick(kSizes, rng);
    if (want_yes) {
      const auto& o = scene.objects[rng.index(scene.objects.size())];
      d.shape = o.shape;
      if (d.color) d.color = o.color;
      if (d.size) d.size = o.size;
    }
    if (matching(scene, d).empty() == want_yes) continue;
    q.subject = d;
    return q;
  }
  return std::nullopt;
}

std::optional<Question> sample_count(const SymbolicScene& scene, Rng& rng) {
  std::vector<Description> all;
  for (auto s : kShapes) all.push_back({s, std::nullopt, std::nullopt});
  for (auto c : kColors) all.push_back({std::nullopt, c, std::nullopt});
  for (auto s : kShapes)
    for (auto c : kColors) all.push_back({s, c, std::nullopt});
  for (auto z : kSizes) {
    all.push_back({std::nullopt, std::nullopt, z});
    for (auto s : kShapes) all.push_back({s, std::nullopt, z});
    for (auto c : kColors) all.push_back({std::nullopt, c, z});
  }
  std::array<std::vector<Description>, 4> by_count;
  for (const auto& d : all) {
    const auto n = matching(scene, d).size();
    if (n <= 3) by_count[n].push_back(d);
  }
  // An unreachable target count gives the slot to another family, keeping answers near uniform.
  const std::size_t target = rng.index(4);
  if (by_count[target].empty()) return std::nullopt;
  Question q;
  q.family = Family::count;
  q.subject = by_count[target][rng.index(by_count[target].size())];
  return q;
}

}  // namespace

std::optional<Question> sample_question(const SymbolicScene& scene, Family family, Rng& rng) {
  switch (family) {
    case Family::attribute: return sample_attribute(scene, rng);
    case Family::relation: return sample_relation(scene, rng);
    case Family::existence: return sample_existence(scene, rng);
    case Family::count: return sample_count(scene, rng);
  }
  return std::nullopt;
}

Dataset generate_dataset(std::size_t n_scenes, std::size_t questions_per_scene, std::uint64_t seed,
                         const GeneratorConfig& config) {
  if (n_scenes < 1) throw DomainError("generate_dataset needs at least one scene");
  if (questions_per_scene < 1) throw DomainError("generate_dataset needs at least one question per scene");
  Dataset ds;
  ds.vocab = question_vocabulary();
  ds.answers = answer_space();
  ds.seed = seed;
  ds.config = config;

  double total_weight = 0.0;
  for (auto f : kFamilies) total_weight += config.family_weights.count(f) ? config.family_weights.at(f) : 0.0;
  if (total_weight <= 0.0) throw DataError("family weights must not all be zero");

  for (std::size_t sid = 0; sid < n_scenes; ++sid) {
    // Each scene draws from its own stream, so records do not depend on generation order.
    Rng rng(splitmix(seed ^ splitmix(sid + 1)));
    SymbolicScene scene = sample_scene(rng, config);
    scene.seed = seed;
    auto features = region_features(scene, rng, config.region_dim);
    std::vector<std::array<double, 4>> boxes;
    for (const auto& o : scene.objects) boxes.push_back(o.box());

    std::set<std::string> asked;
    for (std::size_t k = 0; k < questions_per_scene; ++k) {
      std::optional<Question> q;
      for (int attempt = 0; attempt < 8 && !q; ++attempt) {
        double u = rng.uniform(0.0, total_weight);
        Family family = Family::count;
        for (auto f : kFamilies) {
          const double w = config.family_weights.count(f) ? config.family_weights.at(f) : 0.0;
          if (u < w) {
            family = f;
            break;
          }
          u -= w;
        }
        q = sample_question(scene, family, rng);
        if (q && asked.contains(q->text())) q.reset();
        if (!q) ds.stats.rejected_questions += 1;
      }
      if (!q) continue;
      asked.insert(q->text());
      Record r;
      r.scene_id = sid;
      r.features = features;
      r.boxes = boxes;
      r.question = q->text();
      r.answer = oracle_answer(scene, *q);
      r.family = q->family;
      ds.stats.family_counts[name(r.family)] += 1;
      ds.stats.answer_counts[name(r.family)][r.answer] += 1;
      ds.records.push_back(std::move(r));
    }
  }
  ds.stats.scenes = n_scenes;
  ds.stats.items = ds.records.size();
  return ds;
}

Scene to_scene(const Record& record) {
  const std::size_t n = record.features.size();
  if (n == 0) throw DataError("record has no regions");
  const std::size_t d = record.features.front().size();
  std::vector<double> f, b;
  f.reserve(n * d);
  for (const auto& row : record.features) {
    if (row.size() != d) throw DataError("record feature rows have different widths");
    f.insert(f.end(), row.begin(), row.end());
  }
  for (const auto& box : record.boxes) b.insert(b.end(), box.begin(), box.end());
  if (record.boxes.size() != n) throw DataError("record has " + std::to_string(record.boxes.size()) + " boxes for " + std::to_string(n) + " regions");
  return Scene{Tensor({n, d}, std::move(f)), Tensor({n, 4}, std::move(b))};
}

// --- serialization ---------------------------------------------------------------

std::string record_to_jsonl(const Record& record) {
  ordered_json j;
  j["scene_id"] = record.scene_id;
  j["features"] = record.features;
  j["boxes"] = record.boxes;
  j["question"] = record.question;
  j["answer"] = record.answer;
  j["family"] = name(record.family);
  return j.dump();
}

Record record_from_json(const std::string& line) {
  Record r;
  try {
    auto j = ordered_json::parse(line);
    r.scene_id = j.value("scene_id", std::size_t{0});
    r.features = j.at("features").get<std::vector<std::vector<double>>>();
    r.boxes = j.at("boxes").get<std::vector<std::array<double, 4>>>();
    r.question = j.at("question").get<std::string>();
    r.answer = j.at("answer").get<std::string>();
    r.family = family_from_string(j.at("family").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset record: ") + e.what());
  }
  return r;
}

std::string dataset_to_jsonl(const Dataset& dataset) {
  std::string out;
  for (const auto& r : dataset.records) {
    out += record_to_jsonl(r);
    out += '\n';
  }
  return out;
}

std::string sidecar_json(const Dataset& dataset, const std::map<std::string, double>& extra) {
  ordered_json j;
  j["vocab"] = dataset.vocab.tokens();
  j["answers"] = dataset.answers.answers();
  j["seed"] = dataset.seed;
  ordered_json gen;
  gen["max_objects"] = dataset.config.max_objects;
  gen["min_objects"] = dataset.config.min_objects;
  gen["region_dim"] = dataset.config.region_dim;
  ordered_json weights;
  for (const auto& [f, w] : dataset.config.family_weights) weights[name(f)] = w;
  gen["family_weights"] = weights;
  j["generator"] = gen;
  ordered_json stats;
  stats["scenes"] = dataset.stats.scenes;
  stats["items"] = dataset.stats.items;
  stats["rejected_questions"] = dataset.stats.rejected_questions;
  stats["family_counts"] = dataset.stats.family_counts;
  stats["answer_counts"] = dataset.stats.answer_counts;
  for (const auto& [k, v] : extra) stats[k] = v;
  j["stats"] = stats;
  return j.dump(2) + "\n";
}

std::string default_sidecar_path(const std::string& jsonl_path) { return jsonl_path + ".meta.json"; }

void write_dataset(const Dataset& dataset, const std::string& jsonl_path, const std::string& sidecar_path,
                   const std::map<std::string, double>& extra) {
  write_file_atomic(jsonl_path, dataset_to_jsonl(dataset));
  write_file_atomic(sidecar_path.empty() ? default_sidecar_path(jsonl_path) : sidecar_path, sidecar_json(dataset, extra));
}

Dataset read_dataset(const std::string& jsonl_path, const std::string& sidecar_path) {
  Dataset ds;
  const std::string meta_path = sidecar_path.empty() ? default_sidecar_path(jsonl_path) : sidecar_path;
  ordered_json meta;
  try {
    meta = ordered_json::parse(read_file(meta_path));
    ds.vocab = Vocabulary::from_tokens(meta.at("vocab").get<std::vector<std::string>>());
    ds.answers = AnswerSpace(meta.at("answers").get<std::vector<std::string>>());
    ds.seed = meta.value("seed", std::uint64_t{0});
    if (meta.contains("generator")) {
      const auto& g = meta["generator"];
      ds.config.max_objects = g.value("max_objects", ds.config.max_objects);
      ds.config.min_objects = g.value("min_objects", ds.config.min_objects);
      ds.config.region_dim = g.value("region_dim", ds.config.region_dim);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed dataset sidecar '" + meta_path + "': " + e.what());
  }
  std::ifstream in(jsonl_path);
  if (!in) throw FileError("cannot open dataset '" + jsonl_path + "'");
  std::set<std::size_t> scenes;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    Record r = record_from_json(line);
    if (!ds.answers.contains(r.answer)) throw DataError("record answer '" + r.answer + "' not in answer space");
    scenes.insert(r.scene_id);
    ds.stats.family_counts[name(r.family)] += 1;
    ds.stats.answer_counts[name(r.family)][r.answer] += 1;
    ds.records.push_back(std::move(r));
  }
  if (ds.records.empty()) throw DataError("dataset '" + jsonl_path + "' has no records");
  ds.stats.items = ds.records.size();
  ds.stats.scenes = scenes.size();
  return ds;
}

// --- linear probe ------------------------------------------------------------------

std::map<std::string, double> linear_probe_accuracy(const Dataset& dataset, std::uint64_t seed, std::size_t epochs) {
  const std::size_t v = dataset.vocab.size(), c = dataset.answers.size();
  const std::size_t d = dataset.config.region_dim + v + 1;
  auto encode = [&](const Record& r) {
    std::vector<double> x(d, 0.0);
    for (const auto& row : r.features)
      for (std::size_t k = 0; k < row.size() && k < dataset.config.region_dim; ++k) x[k] += row[k] / static_cast<double>(r.features.size());
    for (auto t : tokenize(r.question, dataset.vocab)) x[dataset.config.region_dim + t] = 1.0;
    x[d - 1] = 1.0;
    return x;
  };
  std::vector<std::size_t> order(dataset.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const std::size_t n_train = order.size() * 4 / 5;

  std::vector<double> w(d * c, 0.0);
  std::vector<double> logits(c);
  const double lr = 0.1;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t k = 0; k < n_train; ++k) {
      const auto& r = dataset.records[order[k]];
      const auto x = encode(r);
      const std::size_t y = dataset.answers.index(r.answer);
      double mx = -1e300;
      for (std::size_t a = 0; a < c; ++a) {
        logits[a] = 0.0;
        for (std::size_t i = 0; i < d; ++i) logits[a] += x[i] * w[i * c + a];
        mx = std::max(mx, logits[a]);
      }
      double z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t a = 0; a < c; ++a) {
        const double g = logits[a] / z - (a == y ? 1.0 : 0.0);
        for (std::size_t i = 0; i < d; ++i) w[i * c + a] -= lr * g * x[i];
      }
    }
  }
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;
  for (std::size_t k = n_train; k < order.size(); ++k) {
    const auto& r = dataset.records[order[k]];
    const auto x = encode(r);
    for (std::size_t a = 0; a < c; ++a) {
      logits[a] = 0.0;
      for (std::size_t i = 0; i < d; ++i) logits[a] += x[i] * w[i * c + a];
    }
    const bool ok = argmax_index(logits) == dataset.answers.index(r.answer);
    for (const std::string& key : {name(r.family), std::string("overall")}) {
      tally[key].first += ok ? 1 : 0;
      tally[key].second += 1;
    }
  }
  std::map<std::string, double> acc;
  for (const auto& [k, t] : tally) acc["probe_accuracy_" + k] = static_cast<double>(t.first) / static_cast<double>(t.second);
  return acc;
}

}  // namespace murel::synth
