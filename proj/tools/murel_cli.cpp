#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "murel/checks.hpp"
#include "murel/errors.hpp"
#include "murel/synthdata.hpp"
#include "murel/train.hpp"
#include "murel/version.hpp"
#include "murel/viz.hpp"

namespace fs = std::filesystem;
using murel::ordered_json;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kCheck = 4 };

/// Failure with a fixed exit code.
struct CliError : std::runtime_error {
  CliError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Creates `dir` or fails with the usage exit code.
void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw CliError(kUsage, "cannot create output directory '" + dir.string() + "'");
  const fs::path probe = dir / ".murel-write-probe";
  try {
    murel::write_file_atomic(probe, "");
  } catch (const murel::FileError&) {
    throw CliError(kUsage, "output directory '" + dir.string() + "' is not writable");
  }
  fs::remove(probe, ec);
}

/// Writes an output file, mapping I/O failures to the usage exit code.
void write_output(const fs::path& path, const std::string& contents) {
  try {
    murel::write_file_atomic(path, contents);
  } catch (const murel::FileError& e) {
    throw CliError(kUsage, e.what());
  }
}

/// manifest.json of one output directory: written when the command starts, finalized when it ends.
class Manifest {
 public:
  Manifest(fs::path dir, std::string command) : dir_(std::move(dir)) {
    doc_["command"] = std::move(command);
    doc_["tool_version"] = murel::kVersion;
    doc_["config_hash"] = nullptr;
    doc_["seeds"] = ordered_json::array();
    doc_["inputs"] = ordered_json::object();
    doc_["outputs"] = ordered_json::array();
    doc_["started_at"] = utc_now();
    doc_["finished_at"] = nullptr;
    doc_["status"] = "running";
  }
  void config_hash(const std::string& h) { doc_["config_hash"] = h; }
  void seed(std::uint64_t s) { doc_["seeds"].push_back(s); }
  void input(const std::string& key, const std::string& path) { doc_["inputs"][key] = path; }
  void output(const std::string& name) { doc_["outputs"].push_back(name); }
  void extra(const std::string& key, ordered_json v) { doc_[key] = std::move(v); }
  void write() { write_output(dir_ / "manifest.json", doc_.dump(2) + "\n"); }
  void finish(const std::string& status) {
    doc_["finished_at"] = utc_now();
    doc_["status"] = status;
    write();
  }

 private:
  fs::path dir_;
  ordered_json doc_;
};

murel::synth::Dataset load_dataset(const std::string& path) {
  if (!fs::exists(path)) throw CliError(kData, "dataset '" + path + "' does not exist");
  return murel::synth::read_dataset(path);
}

ordered_json read_json_file(const std::string& path) {
  if (!fs::exists(path)) throw CliError(kData, "file '" + path + "' does not exist");
  try {
    return ordered_json::parse(murel::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw CliError(kData, "'" + path + "' is not valid JSON: " + e.what());
  }
}

/// Training flags shared by train and ablate; only flags given on the command line override.
struct TrainFlags {
  std::string config_path;
  std::size_t epochs = 0, batch_size = 0, steps = 0, width = 0, rank = 0, train_limit = 0, report_every = 0;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  std::string variant, pairwise, shared, head_activation;
  std::vector<CLI::Option*> given;

  void add(CLI::App* app, bool with_seed) {
    app->add_option("--config", config_path, "JSON training config; explicit flags override its fields");
    reg(app->add_option("--epochs", epochs, "Training epochs"));
    reg(app->add_option("--batch-size", batch_size, "Items per batch")->check(CLI::PositiveNumber));
    reg(app->add_option("--lr", learning_rate, "Adam learning rate")->check(CLI::PositiveNumber));
    reg(app->add_option("--steps", steps, "MuRel iterations T")->check(CLI::Range(1, 8)));
    reg(app->add_option("--width", width, "Width of the cell fusions (0 = default)"));
    reg(app->add_option("--rank", rank, "Rank R of every fusion")->check(CLI::PositiveNumber));
    reg(app->add_option("--pairwise", pairwise, "Pairwise relation module")->check(CLI::IsMember({"on", "off"})));
    reg(app->add_option("--shared", shared, "Share cell weights across steps")->check(CLI::IsMember({"on", "off"})));
    reg(app->add_option("--head-activation", head_activation, "Answer fusion activation")
            ->check(CLI::IsMember({"tanh", "linear"})));
    reg(app->add_option("--train-limit", train_limit, "Use only the first N training items (0 = all)"));
    reg(app->add_option("--report-every", report_every, "Validate every N epochs")->check(CLI::PositiveNumber));
    if (with_seed) {
      reg(app->add_option("--seed", seed, "Seed for initialization, split and batching"));
      reg(app->add_option("--variant", variant, "Model variant")->check(CLI::IsMember({"murel", "attention_baseline"})));
    }
  }

  bool has(const std::string& name) const {
    for (auto* o : given)
      if (o->get_name() == name && o->count() > 0) return true;
    return false;
  }

  murel::TrainConfig resolve() const {
    murel::TrainConfig c;
    if (!config_path.empty()) {
      try {
        c = murel::train_config_from_json(read_json_file(config_path), c);
      } catch (const murel::DataError& e) {
        throw CliError(kData, e.what());
      }
    }
    if (has("--epochs")) c.epochs = epochs;
    if (has("--batch-size")) c.batch_size = batch_size;
    if (has("--lr")) c.learning_rate = learning_rate;
    if (has("--steps")) c.model.steps = steps;
    if (has("--width")) c.model.qs.width = c.model.box.width = c.model.sem.width = width;
    if (has("--rank")) c.model.qs.rank = c.model.box.rank = c.model.sem.rank = c.model.answer.rank = rank;
    if (has("--pairwise")) c.model.pairwise = pairwise == "on";
    if (has("--shared")) c.model.shared_weights = shared == "on";
    if (has("--head-activation")) c.model.answer.activation = murel::activation_from_string(head_activation);
    if (has("--train-limit")) c.train_limit = train_limit;
    if (has("--report-every")) c.report_every = report_every;
    if (has("--seed")) c.seed = seed;
    if (has("--variant")) c.variant = murel::variant_from_string(variant);
    try {
      c.validate();
    } catch (const murel::Error& e) {
      throw CliError(kData, e.what());
    }
    return c;
  }

 private:
  void reg(CLI::Option* o) { given.push_back(o); }
};

void print_distribution(const murel::synth::DatasetStats& stats) {
  std::cout << "scenes " << stats.scenes << ", items " << stats.items << "\n";
  for (const auto& [family, n] : stats.family_counts) {
    std::cout << "  " << std::left << std::setw(10) << family << std::right << std::setw(6) << n << "  ";
    const auto it = stats.answer_counts.find(family);
    if (it != stats.answer_counts.end())
      for (const auto& [a, k] : it->second)
        std::cout << " " << a << "=" << std::fixed << std::setprecision(3) << static_cast<double>(k) / static_cast<double>(n);
    std::cout << "\n";
  }
}

// --- commands ---------------------------------------------------------------------------

struct GenerateArgs {
  long long scenes = 5000;
  long long qps = 3;
  std::uint64_t seed = 0;
  std::size_t max_objects = 8;
  std::size_t region_dim = 32;
  bool probe = false;
  std::string out = "data";
};

int cmd_generate(const GenerateArgs& a) {
  if (a.scenes < 1) throw CliError(kUsage, "--scenes must be at least 1");
  if (a.qps < 1) throw CliError(kUsage, "--qps must be at least 1");
  const fs::path dir(a.out);
  ensure_writable_dir(dir);
  Manifest m(dir, "generate");
  m.seed(a.seed);
  m.extra("arguments", ordered_json{{"scenes", a.scenes}, {"qps", a.qps}, {"max_objects", a.max_objects},
                                    {"region_dim", a.region_dim}, {"probe", a.probe}});
  m.write();
  murel::synth::GeneratorConfig gc;
  gc.max_objects = a.max_objects;
  gc.region_dim = a.region_dim;
  murel::synth::Dataset ds;
  try {
    ds = murel::synth::generate_dataset(static_cast<std::size_t>(a.scenes), static_cast<std::size_t>(a.qps), a.seed, gc);
  } catch (const murel::Error& e) {
    throw CliError(kData, e.what());
  }
  std::map<std::string, double> extra;
  if (a.probe) extra = murel::synth::linear_probe_accuracy(ds, a.seed);
  const fs::path data = dir / "dataset.jsonl";
  write_output(data, murel::synth::dataset_to_jsonl(ds));
  write_output(murel::synth::default_sidecar_path(data.string()), murel::synth::sidecar_json(ds, extra));
  m.output("dataset.jsonl");
  m.output("dataset.jsonl.meta.json");
  print_distribution(ds.stats);
  for (const auto& [k, v] : extra) std::cout << "  " << k << " " << std::fixed << std::setprecision(4) << v << "\n";
  std::cout << "wrote " << data.string() << "\n";
  m.finish("ok");
  return kOk;
}

int cmd_train(const std::string& data_path, const std::string& out, const TrainFlags& flags) {
  const murel::TrainConfig config = flags.resolve();
  const auto ds = load_dataset(data_path);
  const std::string hash = murel::config_hash(config);
  const fs::path dir = fs::path(out) / ("run-" + hash);
  ensure_writable_dir(dir);
  Manifest m(dir, "train");
  m.config_hash(hash);
  m.seed(config.seed);
  m.input("data", data_path);
  if (!flags.config_path.empty()) m.input("config", flags.config_path);
  m.write();
  const auto result = murel::train(ds, config, [](const std::string& line) { std::cout << line << std::endl; });
  murel::save_model(result.model, dir.string());
  write_output(dir / "report.json", murel::to_json(result).dump(2) + "\n");
  m.output("model.json");
  m.output("checkpoint.json");
  m.output("report.json");
  m.extra("wall_seconds", result.wall_seconds);
  std::cout << "validation accuracy " << std::fixed << std::setprecision(4) << result.validation.overall;
  for (const auto& [f, acc] : result.validation.per_family) std::cout << "  " << f << " " << acc;
  std::cout << "\nrun directory " << dir.string() << "\n";
  m.finish("ok");
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path, const std::string& split,
             const std::string& out) {
  if (!fs::exists(checkpoint)) throw CliError(kData, "checkpoint '" + checkpoint + "' does not exist");
  const auto ds = load_dataset(data_path);
  const murel::Model model = murel::load_model(checkpoint);
  std::vector<std::size_t> items;
  if (split == "all") {
    items.resize(ds.records.size());
    for (std::size_t i = 0; i < items.size(); ++i) items[i] = i;
  } else {
    const auto model_seed = model.describe().at("seed").get<std::uint64_t>();
    const auto s = murel::split_by_scene(ds, model_seed);
    items = split == "train" ? s.train : split == "validation" ? s.validation : s.test;
  }
  if (items.empty()) throw CliError(kData, "split '" + split + "' is empty");
  const auto data = murel::prepare(ds, model.vocab(), model.answers());
  const auto rep = murel::evaluate(model, ds, data, items);
  ordered_json j;
  j["split"] = split;
  j["report"] = murel::to_json(rep);
  std::cout << "accuracy " << std::fixed << std::setprecision(4) << rep.overall << " over " << rep.items << " items\n";
  for (const auto& [f, acc] : rep.per_family) std::cout << "  " << f << " " << acc << "\n";
  if (!out.empty()) {
    const fs::path dir(out);
    ensure_writable_dir(dir);
    Manifest m(dir, "eval");
    m.input("checkpoint", checkpoint);
    m.input("data", data_path);
    m.write();
    write_output(dir / "eval.json", j.dump(2) + "\n");
    m.output("eval.json");
    m.extra("wall_seconds", rep.wall_seconds);
    m.finish("ok");
  }
  return kOk;
}

int cmd_ablate(const std::string& data_path, const std::string& out, const TrainFlags& flags,
               const std::vector<std::uint64_t>& seeds, std::size_t jobs, bool attention) {
  const murel::TrainConfig base = flags.resolve();
  const auto ds = load_dataset(data_path);
  const fs::path dir(out);
  ensure_writable_dir(dir);
  Manifest m(dir, "ablate");
  m.config_hash(murel::config_hash(base));
  for (auto s : seeds) m.seed(s);
  m.input("data", data_path);
  if (!flags.config_path.empty()) m.input("config", flags.config_path);
  m.write();
  const auto t0 = std::chrono::steady_clock::now();
  murel::AblationOptions opt;
  opt.seeds = seeds;
  opt.jobs = jobs;
  opt.include_attention = attention;
  opt.on_run = [&](const murel::TrainResult& r, const std::string& hash) {
    const fs::path run_dir = dir / "runs" / ("run-" + hash);
    ensure_writable_dir(run_dir);
    Manifest rm(run_dir, "ablate-run");
    rm.config_hash(hash);
    rm.seed(r.config.seed);
    rm.input("data", data_path);
    rm.write();
    murel::save_model(r.model, run_dir.string());
    write_output(run_dir / "report.json", murel::to_json(r).dump(2) + "\n");
    rm.output("model.json");
    rm.output("checkpoint.json");
    rm.output("report.json");
    rm.extra("wall_seconds", r.wall_seconds);
    rm.finish("ok");
  };
  const auto table = murel::run_ablation_grid(ds, base, opt, [](const std::string& l) { std::cout << l << std::endl; });
  write_output(dir / "ablation.json", murel::to_json(table, base).dump(2) + "\n");
  write_output(dir / "ablation.tsv", murel::ablation_tsv(table));
  const std::string text = murel::ablation_text(table);
  write_output(dir / "ablation.txt", text);
  m.output("ablation.json");
  m.output("ablation.tsv");
  m.output("ablation.txt");
  m.output("runs/");
  m.extra("wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << text;
  m.finish("ok");
  return kOk;
}

int cmd_gradcheck(double eps, double tol, std::uint64_t seed, const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  murel::GradcheckSuiteOptions opt{eps, tol, seed};
  const auto cases = murel::run_gradcheck_suite(opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& c : cases) {
    std::cout << (c.report.passed ? "ok   " : "FAIL ") << std::left << std::setw(12) << c.suite << std::setw(30) << c.name
              << " max rel err " << std::scientific << std::setprecision(3) << c.report.max_rel_error << "\n";
  }
  const bool ok = murel::all_passed(cases);
  std::cout << (ok ? "all gradient checks passed" : "gradient check FAILED") << ", max rel err " << std::scientific
            << std::setprecision(3) << murel::max_rel_error(cases) << " (tol " << tol << ")\n";
  if (!out.empty()) {
    const fs::path dir(out);
    ensure_writable_dir(dir);
    Manifest m(dir, "gradcheck");
    m.seed(seed);
    m.write();
    write_output(dir / "gradcheck.json", murel::to_json(cases, opt).dump(2) + "\n");
    m.output("gradcheck.json");
    m.extra("wall_seconds", secs);
    m.finish(ok ? "ok" : "failed");
  }
  return ok ? kOk : kCheck;
}

int cmd_viz(const std::string& checkpoint, const std::string& data_path, long long index, const std::string& out,
            double threshold, const std::string& impact) {
  if (!fs::exists(checkpoint)) throw CliError(kData, "checkpoint '" + checkpoint + "' does not exist");
  const auto ds = load_dataset(data_path);
  if (index < 0 || static_cast<std::size_t>(index) >= ds.records.size()) {
    throw CliError(kUsage, "--index " + std::to_string(index) + " outside 0.." + std::to_string(ds.records.size() - 1));
  }
  const murel::Model model = murel::load_model(checkpoint);
  if (model.variant() != murel::Variant::murel) throw CliError(kData, "viz needs a MuRel checkpoint");
  const fs::path dir(out);
  ensure_writable_dir(dir);
  Manifest m(dir, "viz");
  m.input("checkpoint", checkpoint);
  m.input("data", data_path);
  m.extra("index", index);
  m.write();

  const auto& rec = ds.records[static_cast<std::size_t>(index)];
  const murel::Scene scene = murel::synth::to_scene(rec);
  const murel::RegionBatch batch = murel::RegionBatch::single(scene);
  std::vector<murel::CellTrace> traces;
  const murel::Tensor scores = model.forward(batch, {murel::tokenize(rec.question, model.vocab())}, &traces);
  const auto report = murel::viz::build_report(traces, threshold, murel::viz::impact_mode_from_string(impact));

  ordered_json j;
  j["index"] = index;
  j["question"] = rec.question;
  j["answer"] = rec.answer;
  j["prediction"] = murel::predict(scores.data(), model.answers());
  j["boxes"] = rec.boxes;
  const auto body = murel::viz::to_json(report);
  for (const auto& [k, v] : body.items()) j[k] = v;
  write_output(dir / "report.json", j.dump(2) + "\n");
  m.output("report.json");
  for (const auto& step : report.steps) {
    const std::string name = "step" + std::to_string(step.step) + ".svg";
    write_output(dir / name, murel::viz::render_svg(scene, step));
    m.output(name);
  }
  std::cout << "question: " << rec.question << "\nanswer: " << rec.answer << "  prediction: " << j["prediction"].get<std::string>()
            << "\nwrote " << report.steps.size() << " step overlays to " << dir.string() << "\n";
  m.finish("ok");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MuRel relational reasoning: data generation, training, evaluation, ablations, checks, visualization"};
  app.set_version_flag("--version", std::string(murel::kVersion));
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate a synthetic relational QA dataset");
  g->add_option("--scenes", gen.scenes, "Number of scenes")->capture_default_str();
  g->add_option("--qps", gen.qps, "Questions per scene")->capture_default_str();
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--max-objects", gen.max_objects, "Maximum objects per scene")->capture_default_str()->check(CLI::Range(2, 36));
  g->add_option("--region-dim", gen.region_dim, "Region feature width d_v")->capture_default_str()->check(CLI::Range(13, 4096));
  g->add_flag("--probe", gen.probe, "Also fit the linear probe and store its accuracies in the sidecar");
  g->add_option("--out", gen.out, "Output directory")->capture_default_str();

  std::string data, out = "runs", checkpoint, split = "all", impact = "elementwise";
  TrainFlags train_flags, ablate_flags;
  auto* t = app.add_subcommand("train", "Train one model and write a run directory named by config hash");
  t->add_option("--data", data, "Dataset JSONL (sidecar next to it)")->required();
  t->add_option("--out", out, "Parent directory of the run directory")->capture_default_str();
  train_flags.add(t, true);

  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--checkpoint", checkpoint, "checkpoint.json (model.json alongside)")->required();
  e->add_option("--data", data, "Dataset JSONL")->required();
  e->add_option("--split", split, "Items to score")->check(CLI::IsMember({"all", "train", "validation", "test"}))->capture_default_str();
  std::string eval_out;
  e->add_option("--out", eval_out, "Optional directory for eval.json and its manifest");

  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t jobs = 1;
  bool no_attention = false;
  auto* a = app.add_subcommand("ablate", "Pairwise x iteration grid, T sweep and attention comparison");
  a->add_option("--data", data, "Dataset JSONL")->required();
  a->add_option("--out", out, "Output directory")->capture_default_str();
  a->add_option("--seeds", seeds, "Seeds per cell")->delimiter(',')->capture_default_str();
  a->add_option("--jobs", jobs, "Runs trained concurrently")->check(CLI::PositiveNumber)->capture_default_str();
  a->add_flag("--no-attention", no_attention, "Skip the attention baseline runs");
  ablate_flags.add(a, false);

  double eps = 1e-5, tol = 1e-4;
  std::uint64_t gc_seed = 0;
  std::string gc_out;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check of every gradient path");
  c->add_option("--eps", eps, "Central-difference step")->capture_default_str();
  c->add_option("--tol", tol, "Maximum relative error")->capture_default_str();
  c->add_option("--seed", gc_seed, "Seed of the random check inputs")->capture_default_str();
  c->add_option("--out", gc_out, "Optional directory for gradcheck.json and its manifest");

  long long index = 0;
  double threshold = murel::viz::kDefaultThreshold;
  std::string viz_out = "viz";
  auto* v = app.add_subcommand("viz", "Per-step contribution maps and relation edges for one item");
  v->add_option("--checkpoint", checkpoint, "checkpoint.json of a MuRel run")->required();
  v->add_option("--data", data, "Dataset JSONL")->required();
  v->add_option("--index", index, "Record index")->capture_default_str();
  v->add_option("--out", viz_out, "Output directory")->capture_default_str();
  v->add_option("--threshold", threshold, "Minimum edge weight")->capture_default_str();
  v->add_option("--impact", impact, "Pairwise impact score")->check(CLI::IsMember({"elementwise", "norm_ratio"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& s) {
    return app.exit(s);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsage;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(data, out, train_flags);
    if (*e) return cmd_eval(checkpoint, data, split, eval_out);
    if (*a) return cmd_ablate(data, out, ablate_flags, seeds, jobs, !no_attention);
    if (*c) return cmd_gradcheck(eps, tol, gc_seed, gc_out);
    if (*v) return cmd_viz(checkpoint, data, index, viz_out, threshold, impact);
  } catch (const CliError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return err.code;
  } catch (const murel::FileError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kData;
  } catch (const murel::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kData;
  }
  return kUsage;
}
