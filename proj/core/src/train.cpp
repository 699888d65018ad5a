#include "murel/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "murel/errors.hpp"
#include "murel/ops.hpp"

namespace murel {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

ordered_json to_json(const FusionShape& s) {
  return ordered_json{{"width", s.width}, {"rank", s.rank}, {"activation", to_string(s.activation)}};
}

FusionShape fusion_shape_from_json(const ordered_json& j, FusionShape base) {
  for (const auto& [k, v] : j.items()) {
    if (k == "width") base.width = v.get<std::size_t>();
    else if (k == "rank") base.rank = v.get<std::size_t>();
    else if (k == "activation") base.activation = activation_from_string(v.get<std::string>());
    else throw DataError("unknown fusion field '" + k + "'");
  }
  return base;
}

}  // namespace

std::string to_string(Variant v) { return v == Variant::murel ? "murel" : "attention_baseline"; }

Variant variant_from_string(const std::string& s) {
  if (s == "murel") return Variant::murel;
  if (s == "attention_baseline" || s == "attention") return Variant::attention_baseline;
  throw DataError("unknown model variant '" + s + "'");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw DataError("batch_size must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw DataError("learning_rate must be positive");
  if (embed_dim < 1 || hidden_dim < 1) throw DataError("encoder dimensions must be positive");
  if (report_every < 1) throw DataError("report_every must be at least 1");
  try {
    model.validate();
  } catch (const Error& e) {
    throw DataError(std::string("model config: ") + e.what());
  }
}

// --- config JSON -------------------------------------------------------------------

ordered_json to_json(const MurelConfig& c) {
  ordered_json j;
  j["steps"] = c.steps;
  j["region_dim"] = c.region_dim;
  j["question_dim"] = c.question_dim;
  j["answers"] = c.answers;
  j["pairwise"] = c.pairwise;
  j["include_self_pairs"] = c.include_self_pairs;
  j["shared_weights"] = c.shared_weights;
  j["qs"] = to_json(c.qs);
  j["box"] = to_json(c.box);
  j["sem"] = to_json(c.sem);
  j["answer"] = to_json(c.answer);
  return j;
}

MurelConfig murel_config_from_json(const ordered_json& j, MurelConfig c) {
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "steps") c.steps = v.get<std::size_t>();
      else if (k == "region_dim") c.region_dim = v.get<std::size_t>();
      else if (k == "question_dim") c.question_dim = v.get<std::size_t>();
      else if (k == "answers") c.answers = v.get<std::size_t>();
      else if (k == "pairwise") c.pairwise = v.get<bool>();
      else if (k == "include_self_pairs") c.include_self_pairs = v.get<bool>();
      else if (k == "shared_weights") c.shared_weights = v.get<bool>();
      else if (k == "qs") c.qs = fusion_shape_from_json(v, c.qs);
      else if (k == "box") c.box = fusion_shape_from_json(v, c.box);
      else if (k == "sem") c.sem = fusion_shape_from_json(v, c.sem);
      else if (k == "answer") c.answer = fusion_shape_from_json(v, c.answer);
      else throw DataError("unknown model field '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

ordered_json to_json(const TrainConfig& c) {
  ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["variant"] = to_string(c.variant);
  j["model"] = to_json(c.model);
  j["embed_dim"] = c.embed_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["attention_width"] = c.attention_width;
  j["report_every"] = c.report_every;
  j["bucket_by_regions"] = c.bucket_by_regions;
  j["train_limit"] = c.train_limit;
  return j;
}

TrainConfig train_config_from_json(const ordered_json& j, TrainConfig c) {
  if (!j.is_object()) throw DataError("training config must be a JSON object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "epochs") c.epochs = v.get<std::size_t>();
      else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "learning_rate") c.learning_rate = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "variant") c.variant = variant_from_string(v.get<std::string>());
      else if (k == "model") c.model = murel_config_from_json(v, c.model);
      else if (k == "embed_dim") c.embed_dim = v.get<std::size_t>();
      else if (k == "hidden_dim") c.hidden_dim = v.get<std::size_t>();
      else if (k == "attention_width") c.attention_width = v.get<std::size_t>();
      else if (k == "report_every") c.report_every = v.get<std::size_t>();
      else if (k == "bucket_by_regions") c.bucket_by_regions = v.get<bool>();
      else if (k == "train_limit") c.train_limit = v.get<std::size_t>();
      else throw DataError("unknown training field '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string config_hash(const TrainConfig& c) { return fnv1a_hex(to_json(c).dump()); }

// --- model -------------------------------------------------------------------------

Model::Model(const TrainConfig& config, const Vocabulary& vocab, const AnswerSpace& answers, std::size_t region_dim)
    : variant_(config.variant), seed_(config.seed), region_dim_(region_dim), vocab_(vocab), answers_(answers) {
  config.validate();
  gru_ = GruConfig{vocab.size(), config.embed_dim, config.hidden_dim};
  murel_config_ = config.model;
  murel_config_.region_dim = region_dim;
  murel_config_.question_dim = config.hidden_dim;
  murel_config_.answers = answers.size();
  murel_config_.validate();
  if (variant_ == Variant::attention_baseline) {
    Rng probe(0);
    const std::size_t target = MurelNet(murel_config_, probe).parameter_count();
    attention_config_ = matched_attention_config(murel_config_, target);
    if (config.attention_width) attention_config_.width = config.attention_width;
  }
  build();
}

void Model::build() {
  Rng rng(mix(seed_));
  encoder_ = QuestionEncoder(gru_, rng);
  store_ = ParamStore();
  encoder_.register_params(store_, "qencoder");
  if (variant_ == Variant::murel) {
    murel_ = MurelNet(murel_config_, rng);
    murel_.register_params(store_, "murel");
  } else {
    baseline_ = AttentionBaseline(attention_config_, rng);
    baseline_.register_params(store_, "baseline");
  }
}

std::size_t Model::answer_model_parameter_count() const {
  return store_.parameter_count() - store_.parameter_count("qencoder.");
}

Tensor Model::forward(const RegionBatch& batch, const std::vector<std::vector<std::size_t>>& tokens,
                      std::vector<CellTrace>* traces) const {
  const Tensor q = encoder_.encode_batch(tokens);
  if (variant_ == Variant::murel) {
    auto out = murel_.forward(batch, q, traces != nullptr);
    if (traces) *traces = std::move(out.traces);
    return out.scores;
  }
  return baseline_.forward(batch, q).scores;
}

ordered_json Model::describe() const {
  ordered_json j;
  j["format"] = "murel-model";
  j["variant"] = to_string(variant_);
  j["seed"] = seed_;
  j["region_dim"] = region_dim_;
  j["encoder"] = ordered_json{{"vocab_size", gru_.vocab_size}, {"embed_dim", gru_.embed_dim}, {"hidden_dim", gru_.hidden_dim}};
  j["murel"] = to_json(murel_config_);
  if (variant_ == Variant::attention_baseline) {
    j["attention"] = ordered_json{{"glimpses", attention_config_.glimpses},
                                  {"width", attention_config_.width},
                                  {"rank", attention_config_.rank},
                                  {"answer", to_json(attention_config_.answer)}};
  }
  j["vocab"] = vocab_.tokens();
  j["answers"] = answers_.answers();
  j["parameter_count"] = store_.parameter_count();
  return j;
}

Model Model::from_description(const ordered_json& j) {
  Model m;
  try {
    m.variant_ = variant_from_string(j.at("variant").get<std::string>());
    m.seed_ = j.at("seed").get<std::uint64_t>();
    m.region_dim_ = j.at("region_dim").get<std::size_t>();
    const auto& e = j.at("encoder");
    m.gru_ = GruConfig{e.at("vocab_size").get<std::size_t>(), e.at("embed_dim").get<std::size_t>(),
                       e.at("hidden_dim").get<std::size_t>()};
    m.murel_config_ = murel_config_from_json(j.at("murel"));
    m.vocab_ = Vocabulary::from_tokens(j.at("vocab").get<std::vector<std::string>>());
    m.answers_ = AnswerSpace(j.at("answers").get<std::vector<std::string>>());
    if (m.variant_ == Variant::attention_baseline) {
      const auto& a = j.at("attention");
      auto& c = m.attention_config_;
      c.region_dim = m.region_dim_;
      c.question_dim = m.gru_.hidden_dim;
      c.answers = m.answers_.size();
      c.glimpses = a.at("glimpses").get<std::size_t>();
      c.width = a.at("width").get<std::size_t>();
      c.rank = a.at("rank").get<std::size_t>();
      c.answer = fusion_shape_from_json(a.at("answer"), {});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model description: ") + e.what());
  }
  if (m.vocab_.size() != m.gru_.vocab_size) throw DataError("model vocabulary size disagrees with encoder");
  m.build();
  return m;
}

void save_model(const Model& model, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(std::filesystem::path(dir) / "model.json", model.describe().dump(2) + "\n");
  save_checkpoint(model.params(), std::filesystem::path(dir) / "checkpoint.json");
}

Model load_model(const std::string& checkpoint_path) {
  const auto desc_path = std::filesystem::path(checkpoint_path).parent_path() / "model.json";
  ordered_json desc;
  try {
    desc = ordered_json::parse(read_file(desc_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed " + desc_path.string() + ": " + e.what());
  }
  Model m = Model::from_description(desc);
  load_checkpoint(checkpoint_path, m.params());
  return m;
}

// --- data ----------------------------------------------------------------------------

Split split_by_scene(const synth::Dataset& dataset, std::uint64_t seed) {
  std::vector<std::size_t> scenes;
  {
    std::set<std::size_t> seen;
    for (const auto& r : dataset.records)
      if (seen.insert(r.scene_id).second) scenes.push_back(r.scene_id);
  }
  std::sort(scenes.begin(), scenes.end());
  Rng rng(mix(seed ^ 0x5917ULL));
  std::shuffle(scenes.begin(), scenes.end(), rng.engine());
  const std::size_t n = scenes.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  std::map<std::size_t, int> part;
  for (std::size_t k = 0; k < n; ++k) part[scenes[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
  Split s;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    switch (part[dataset.records[i].scene_id]) {
      case 0: s.train.push_back(i); break;
      case 1: s.validation.push_back(i); break;
      default: s.test.push_back(i); break;
    }
  }
  return s;
}

PreparedData prepare(const synth::Dataset& dataset, const Vocabulary& vocab, const AnswerSpace& answers) {
  PreparedData p;
  p.scenes.reserve(dataset.records.size());
  std::map<std::size_t, std::size_t> first_of_scene;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& r = dataset.records[i];
    auto [it, fresh] = first_of_scene.try_emplace(r.scene_id, i);
    // Records of one scene share tensors when their regions are identical.
    if (!fresh && dataset.records[it->second].features == r.features && dataset.records[it->second].boxes == r.boxes) {
      p.scenes.push_back(p.scenes[it->second]);
    } else {
      p.scenes.push_back(synth::to_scene(r));
    }
    p.tokens.push_back(tokenize(r.question, vocab));
    if (!answers.contains(r.answer)) throw DataError("answer '" + r.answer + "' is outside the model's answer space");
    p.targets.push_back(answers.index(r.answer));
  }
  return p;
}

namespace {

RegionBatch make_batch(const PreparedData& data, std::span<const std::size_t> idx,
                       std::vector<std::vector<std::size_t>>& tokens) {
  std::vector<const Scene*> scenes;
  tokens.clear();
  for (auto i : idx) {
    scenes.push_back(&data.scenes[i]);
    tokens.push_back(data.tokens[i]);
  }
  return RegionBatch::from_scenes(scenes);
}

std::vector<std::vector<std::size_t>> make_batches(const PreparedData& data, std::vector<std::size_t> items,
                                                   std::size_t batch_size, bool bucket, Rng* rng) {
  std::vector<std::vector<std::size_t>> batches;
  if (rng) std::shuffle(items.begin(), items.end(), rng->engine());
  if (!bucket) {
    for (std::size_t k = 0; k < items.size(); k += batch_size)
      batches.emplace_back(items.begin() + k, items.begin() + std::min(items.size(), k + batch_size));
    return batches;
  }
  std::map<std::size_t, std::vector<std::size_t>> buckets;
  for (auto i : items) buckets[data.scenes[i].regions()].push_back(i);
  for (auto& [n, b] : buckets)
    for (std::size_t k = 0; k < b.size(); k += batch_size)
      batches.emplace_back(b.begin() + k, b.begin() + std::min(b.size(), k + batch_size));
  if (rng) std::shuffle(batches.begin(), batches.end(), rng->engine());
  return batches;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

[[noreturn]] void report_non_finite(const Tape& tape, const ParamStore& store, double loss) {
  for (const auto& [name, t] : store.entries())
    if (!all_finite(t.data())) throw StateError("non-finite loss " + std::to_string(loss) + ": parameter '" + name + "' holds non-finite values");
  for (const auto& e : tape.entries())
    if (!all_finite(e.output.data())) {
      throw StateError("non-finite loss " + std::to_string(loss) + ": first non-finite tensor is '" + e.output.label() +
                  "' (op " + e.op + ", shape " + shape_str(e.output.shape()) + ")");
    }
  throw StateError("non-finite loss " + std::to_string(loss) + " with finite intermediates");
}

}  // namespace

double EvalReport::family_accuracy(const std::string& family) const {
  auto it = per_family.find(family);
  return it == per_family.end() ? 0.0 : it->second;
}

ordered_json to_json(const EvalReport& r, bool include_timing) {
  ordered_json j;
  j["items"] = r.items;
  j["correct"] = r.correct;
  j["overall"] = r.overall;
  j["per_family"] = r.per_family;
  j["family_items"] = r.family_items;
  j["family_correct"] = r.family_correct;
  j["confusion"] = r.confusion;
  if (include_timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

EvalReport evaluate(const Model& model, const synth::Dataset& dataset, const PreparedData& data,
                    const std::vector<std::size_t>& indices, std::size_t batch_size) {
  const auto t0 = std::chrono::steady_clock::now();
  EvalReport rep;
  std::vector<std::vector<std::size_t>> tokens;
  for (const auto& b : make_batches(data, indices, std::max<std::size_t>(batch_size, 1), true, nullptr)) {
    const RegionBatch batch = make_batch(data, b, tokens);
    const Tensor scores = model.forward(batch, tokens);
    const std::size_t c = scores.cols();
    for (std::size_t g = 0; g < b.size(); ++g) {
      const std::size_t pred = argmax_index(scores.data().subspan(g * c, c));
      const auto& rec = dataset.records[b[g]];
      const std::string fam = synth::name(rec.family);
      const bool ok = pred == data.targets[b[g]];
      rep.items += 1;
      rep.correct += ok;
      rep.family_items[fam] += 1;
      rep.family_correct[fam] += ok;
      rep.confusion[rec.answer][model.answers().answer(pred)] += 1;
    }
  }
  rep.overall = rep.items ? static_cast<double>(rep.correct) / static_cast<double>(rep.items) : 0.0;
  for (const auto& [f, n] : rep.family_items)
    rep.per_family[f] = static_cast<double>(rep.family_correct[f]) / static_cast<double>(n);
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

double accuracy_on(const Model& model, const synth::Dataset& dataset, const std::vector<std::size_t>& indices) {
  const auto data = prepare(dataset, model.vocab(), model.answers());
  return evaluate(model, dataset, data, indices).overall;
}

ordered_json to_json(const TrainResult& r) {
  ordered_json j;
  j["config"] = to_json(r.config);
  j["config_hash"] = config_hash(r.config);
  j["parameter_count"] = r.model.parameter_count();
  j["answer_model_parameter_count"] = r.model.answer_model_parameter_count();
  j["split"] = ordered_json{{"train", r.split.train.size()}, {"validation", r.split.validation.size()}, {"test", r.split.test.size()}};
  ordered_json hist = ordered_json::array();
  for (const auto& e : r.history) {
    ordered_json h{{"epoch", e.epoch}, {"train_loss", e.train_loss}};
    if (e.validation_accuracy) h["validation_accuracy"] = *e.validation_accuracy;
    hist.push_back(h);
  }
  j["history"] = hist;
  j["best_epoch"] = r.best_epoch;
  j["validation"] = to_json(r.validation);
  j["test"] = to_json(r.test);
  return j;
}

TrainResult train(const synth::Dataset& dataset, const TrainConfig& config, const ProgressFn& progress) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  if (dataset.records.empty()) throw DataError("cannot train on an empty dataset");
  TrainResult res;
  res.config = config;
  res.model = Model(config, dataset.vocab, dataset.answers, dataset.records.front().features.front().size());
  res.split = split_by_scene(dataset, config.seed);
  if (config.train_limit && res.split.train.size() > config.train_limit) res.split.train.resize(config.train_limit);
  if (res.split.train.empty()) throw DataError("training split is empty");

  const PreparedData data = prepare(dataset, dataset.vocab, dataset.answers);
  Model& model = res.model;
  std::vector<Tensor> params = model.params().tensors();
  AdamState adam;
  adam.learning_rate = config.learning_rate;
  Rng rng(mix(config.seed ^ 0xB47C4ULL));

  const auto& val_items = res.split.validation.empty() ? res.split.train : res.split.validation;
  double best = evaluate(model, dataset, data, val_items).overall;
  std::string best_state = checkpoint_to_string(model.params());
  res.best_epoch = 0;

  std::vector<std::vector<std::size_t>> tokens;
  std::vector<std::size_t> targets;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t loss_items = 0;
    for (const auto& b : make_batches(data, res.split.train, config.batch_size, config.bucket_by_regions, &rng)) {
      const RegionBatch batch = make_batch(data, b, tokens);
      targets.clear();
      for (auto i : b) targets.push_back(data.targets[i]);
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = softmax_cross_entropy_mean(model.forward(batch, tokens), targets);
      }
      const double value = loss.item();
      if (!std::isfinite(value)) report_non_finite(tape, model.params(), value);
      // Parameters the batch never reaches still get a zero gradient.
      for (auto& p : params) p.grad_buffer();
      tape.backward(loss);
      adam_step(params, adam);
      loss_sum += value * static_cast<double>(b.size());
      loss_items += b.size();
    }
    EpochLog log{epoch, loss_sum / static_cast<double>(loss_items), std::nullopt};
    if (epoch % config.report_every == 0 || epoch == config.epochs) {
      const double acc = evaluate(model, dataset, data, val_items).overall;
      log.validation_accuracy = acc;
      if (acc > best) {
        best = acc;
        best_state = checkpoint_to_string(model.params());
        res.best_epoch = epoch;
      }
    }
    if (progress) {
      std::ostringstream os;
      os << "epoch " << epoch << "/" << config.epochs << " loss " << std::fixed << std::setprecision(4) << log.train_loss;
      if (log.validation_accuracy) os << " val " << std::setprecision(4) << *log.validation_accuracy;
      progress(os.str());
    }
    res.history.push_back(log);
  }
  checkpoint_from_string(best_state, model.params());
  res.validation = evaluate(model, dataset, data, val_items);
  res.test = evaluate(model, dataset, data, res.split.test.empty() ? val_items : res.split.test);
  res.wall_seconds = seconds_since(t0);
  return res;
}

// --- ablation ------------------------------------------------------------------------

double AblationRow::mean(const std::string& key) const {
  auto it = accuracy.find(key);
  if (it == accuracy.end() || it->second.empty()) return 0.0;
  return std::accumulate(it->second.begin(), it->second.end(), 0.0) / static_cast<double>(it->second.size());
}

double AblationRow::stddev(const std::string& key) const {
  auto it = accuracy.find(key);
  if (it == accuracy.end() || it->second.empty()) return 0.0;
  const double m = mean(key);
  double s = 0.0;
  for (double v : it->second) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(it->second.size()));
}

AblationTable run_ablation_grid(const synth::Dataset& dataset, const TrainConfig& base, const AblationOptions& options,
                                const ProgressFn& progress) {
  if (options.seeds.empty()) throw DataError("ablation needs at least one seed");
  struct Cell {
    std::string group, label;
    Variant variant;
    bool pairwise;
    std::size_t steps;
  };
  std::vector<Cell> cells = {
      {"grid", "neither (T=1)", Variant::murel, false, 1},
      {"grid", "pairwise only (T=1)", Variant::murel, true, 1},
      {"grid", "iterate only (T=3)", Variant::murel, false, 3},
      {"grid", "full (pairwise, T=3)", Variant::murel, true, 3},
  };
  for (std::size_t t = 1; t <= 4; ++t) cells.push_back({"sweep", "pairwise T=" + std::to_string(t), Variant::murel, true, t});

  auto config_for = [&](Variant v, bool pw, std::size_t steps, std::uint64_t seed) {
    TrainConfig c = base;
    c.variant = v;
    c.model.pairwise = pw;
    c.model.steps = steps;
    c.seed = seed;
    return c;
  };

  // Unique runs in a fixed order; results are looked up by config hash.
  std::vector<TrainConfig> jobs;
  std::set<std::string> queued;
  auto enqueue = [&](const TrainConfig& c) {
    if (queued.insert(config_hash(c)).second) jobs.push_back(c);
  };
  for (const auto& cell : cells)
    for (auto s : options.seeds) enqueue(config_for(cell.variant, cell.pairwise, cell.steps, s));
  if (options.include_attention)
    for (auto s : options.seeds) enqueue(config_for(Variant::attention_baseline, true, base.model.steps, s));

  std::map<std::string, AblationRun> results;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next++;
      if (k >= jobs.size()) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      try {
        const auto& c = jobs[k];
        TrainResult r = train(dataset, c);
        AblationRun run{c.model.pairwise, c.model.steps, c.seed, c.variant, r.model.parameter_count(), config_hash(c),
                        r.validation};
        std::lock_guard lock(mu);
        if (options.on_run) options.on_run(r, run.hash);
        results[run.hash] = run;
        if (progress) {
          std::ostringstream os;
          os << "[" << results.size() << "/" << jobs.size() << "] " << to_string(c.variant)
             << " pairwise=" << (c.model.pairwise ? "on" : "off") << " T=" << c.model.steps << " seed=" << c.seed
             << " val=" << std::fixed << std::setprecision(4) << r.validation.overall
             << " relation=" << r.validation.family_accuracy("relation") << " (" << std::setprecision(1)
             << r.wall_seconds << "s)";
          progress(os.str());
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(options.jobs, jobs.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  auto make_row = [&](const std::string& group, const std::string& label, Variant v, bool pw, std::size_t steps) {
    AblationRow row{group, label, v, pw, steps, 0, options.seeds, {}};
    for (auto s : options.seeds) {
      const auto& run = results.at(config_hash(config_for(v, pw, steps, s)));
      row.parameter_count = run.parameter_count;
      row.accuracy["overall"].push_back(run.validation.overall);
      for (auto f : synth::kFamilies) row.accuracy[synth::name(f)].push_back(run.validation.family_accuracy(synth::name(f)));
    }
    return row;
  };
  AblationTable table;
  for (const auto& cell : cells) table.rows.push_back(make_row(cell.group, cell.label, cell.variant, cell.pairwise, cell.steps));
  if (options.include_attention) {
    table.attention = make_row("baseline", "attention", Variant::attention_baseline, true, base.model.steps);
  }
  for (const auto& c : jobs) table.runs.push_back(results.at(config_hash(c)));
  return table;
}

namespace {

std::vector<std::string> metric_keys() {
  std::vector<std::string> keys{"overall"};
  for (auto f : synth::kFamilies) keys.push_back(synth::name(f));
  return keys;
}

ordered_json row_json(const AblationRow& row) {
  ordered_json j;
  j["group"] = row.group;
  j["label"] = row.label;
  j["variant"] = to_string(row.variant);
  j["pairwise"] = row.pairwise;
  j["steps"] = row.steps;
  j["parameter_count"] = row.parameter_count;
  j["seeds"] = row.seeds;
  for (const auto& k : metric_keys()) {
    j[k] = ordered_json{{"mean", row.mean(k)}, {"std", row.stddev(k)}, {"per_seed", row.accuracy.count(k) ? row.accuracy.at(k) : std::vector<double>{}}};
  }
  return j;
}

}  // namespace

ordered_json to_json(const AblationTable& t, const TrainConfig& base) {
  ordered_json j;
  j["base_config"] = to_json(base);
  ordered_json rows = ordered_json::array();
  for (const auto& r : t.rows) rows.push_back(row_json(r));
  j["rows"] = rows;
  if (!t.attention.seeds.empty()) j["attention"] = row_json(t.attention);
  ordered_json runs = ordered_json::array();
  for (const auto& r : t.runs) {
    runs.push_back(ordered_json{{"config_hash", r.hash},
                                {"variant", to_string(r.variant)},
                                {"pairwise", r.pairwise},
                                {"steps", r.steps},
                                {"seed", r.seed},
                                {"parameter_count", r.parameter_count},
                                {"validation", to_json(r.validation)}});
  }
  j["runs"] = runs;
  return j;
}

std::string ablation_tsv(const AblationTable& t) {
  std::ostringstream os;
  os << "group\tlabel\tvariant\tpairwise\tsteps\tparameters";
  for (const auto& k : metric_keys()) os << '\t' << k << "_mean\t" << k << "_std";
  os << '\n';
  auto emit = [&](const AblationRow& r) {
    os << r.group << '\t' << r.label << '\t' << to_string(r.variant) << '\t' << (r.pairwise ? "on" : "off") << '\t'
       << r.steps << '\t' << r.parameter_count;
    os << std::setprecision(17);
    for (const auto& k : metric_keys()) os << '\t' << r.mean(k) << '\t' << r.stddev(k);
    os << '\n';
  };
  for (const auto& r : t.rows) emit(r);
  if (!t.attention.seeds.empty()) emit(t.attention);
  return os.str();
}

std::string ablation_text(const AblationTable& t) {
  std::ostringstream os;
  const auto keys = metric_keys();
  os << std::left << std::setw(8) << "group" << std::setw(24) << "model" << std::right << std::setw(8) << "params";
  for (const auto& k : keys) os << std::setw(18) << k;
  os << '\n';
  auto emit = [&](const AblationRow& r) {
    os << std::left << std::setw(8) << r.group << std::setw(24) << r.label << std::right << std::setw(8) << r.parameter_count;
    for (const auto& k : keys) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(2) << 100.0 * r.mean(k) << " +- " << 100.0 * r.stddev(k);
      os << std::setw(18) << cell.str();
    }
    os << '\n';
  };
  for (const auto& r : t.rows) emit(r);
  if (!t.attention.seeds.empty()) emit(t.attention);
  return os.str();
}

}  // namespace murel
