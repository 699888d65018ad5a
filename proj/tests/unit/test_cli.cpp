#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>

#include "murel/params.hpp"
#include "murel/synthdata.hpp"

namespace fs = std::filesystem;
using murel::read_file;

namespace {

struct CliRun {
  int code = -1;
  std::string output;
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(MUREL_CLI) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, pipe)) > 0;) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("murel_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path only_run_dir(const fs::path& parent) {
  fs::path found;
  int n = 0;
  for (const auto& e : fs::directory_iterator(parent))
    if (e.is_directory() && e.path().filename().string().rfind("run-", 0) == 0) {
      found = e.path();
      ++n;
    }
  EXPECT_EQ(n, 1);
  return found;
}

std::size_t manifests_in(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().filename() == "manifest.json";
  return n;
}

/// Small dataset shared by the training-based tests.
const fs::path& tiny_data() {
  static const fs::path dir = [] {
    fs::path d = scratch("tiny");
    CliRun r = run("generate --scenes 30 --qps 3 --seed 5 --out " + d.string());
    EXPECT_EQ(r.code, 0) << r.output;
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Cli, VersionAndHelp) {
  CliRun v = run("--version");
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.output.find("0.1.0"), std::string::npos);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("generate --scenes 0 --out " + scratch("zero").string()).code, 2);
  EXPECT_EQ(run("generate --scenes 3 --bogus 1").code, 2);
  EXPECT_EQ(run("generate --scenes 3 --out /proc/murel-no-such-dir").code, 2);
  EXPECT_EQ(run("train").code, 2);
}

TEST(Cli, GenerateIsDeterministic) {
  fs::path a = scratch("gen_a"), b = scratch("gen_b");
  ASSERT_EQ(run("generate --scenes 10 --seed 0 --out " + a.string()).code, 0);
  ASSERT_EQ(run("generate --scenes 10 --seed 0 --out " + b.string()).code, 0);
  for (const char* f : {"dataset.jsonl", "dataset.jsonl.meta.json"})
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  EXPECT_EQ(manifests_in(a), 1u);
}

TEST(Cli, DefaultGenerateWritesJsonlAndVocabulary) {
  fs::path d = scratch("gen_default");
  CliRun r = run("generate --out " + d.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("relation"), std::string::npos);
  auto meta = nlohmann::json::parse(read_file(d / "dataset.jsonl.meta.json"));
  EXPECT_TRUE(meta.contains("vocab"));
  EXPECT_TRUE(meta.contains("answers"));
  EXPECT_EQ(meta["stats"]["scenes"], 5000);
  fs::remove_all(d);
}

TEST(Cli, DataErrorsExitThree) {
  fs::path d = scratch("bad");
  EXPECT_EQ(run("train --data " + (d / "missing.jsonl").string() + " --out " + d.string()).code, 3);
  murel::write_file_atomic(d / "cfg.json", "{\"epochz\": 1}");
  const std::string data = (tiny_data() / "dataset.jsonl").string();
  EXPECT_EQ(run("train --data " + data + " --config " + (d / "cfg.json").string() + " --out " + d.string()).code, 3);
  EXPECT_EQ(run("eval --checkpoint " + (d / "nope.json").string() + " --data " + data).code, 3);
  fs::copy_file(tiny_data() / "dataset.jsonl.meta.json", d / "broken.jsonl.meta.json");
  murel::write_file_atomic(d / "broken.jsonl", "{\"scene_id\": 0}\n");
  EXPECT_EQ(run("eval --checkpoint " + (d / "nope.json").string() + " --data " + (d / "broken.jsonl").string()).code, 3);
}

TEST(Cli, GradcheckPasses) {
  fs::path d = scratch("gradcheck");
  CliRun r = run("gradcheck --out " + d.string());
  ASSERT_EQ(r.code, 0) << r.output;
  auto j = nlohmann::json::parse(read_file(d / "gradcheck.json"));
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_LT(j["max_rel_error"].get<double>(), 1e-4);
  EXPECT_EQ(manifests_in(d), 1u);
}

TEST(Cli, TrainIsReproducibleAndEvalMatches) {
  const std::string data = (tiny_data() / "dataset.jsonl").string();
  fs::path a = scratch("train_a"), b = scratch("train_b");
  ASSERT_EQ(run("train --data " + data + " --epochs 2 --steps 2 --out " + a.string()).code, 0);
  ASSERT_EQ(run("train --data " + data + " --epochs 2 --steps 2 --out " + b.string()).code, 0);
  fs::path ra = only_run_dir(a), rb = only_run_dir(b);
  EXPECT_EQ(ra.filename(), rb.filename());
  for (const char* f : {"model.json", "checkpoint.json", "report.json"}) EXPECT_EQ(read_file(ra / f), read_file(rb / f)) << f;
  EXPECT_EQ(manifests_in(ra), 1u);

  fs::path e = scratch("eval");
  CliRun ev = run("eval --checkpoint " + (ra / "checkpoint.json").string() + " --data " + data +
               " --split validation --out " + e.string());
  ASSERT_EQ(ev.code, 0) << ev.output;
  auto report = nlohmann::json::parse(read_file(ra / "report.json"));
  auto eval = nlohmann::json::parse(read_file(e / "eval.json"));
  EXPECT_EQ(eval["report"]["overall"].get<double>(), report["validation"]["overall"].get<double>());
}

TEST(Cli, ZeroEpochCheckpointIsNearChanceOnBalancedSet) {
  // Equal item counts per answer, so any fixed predictor scores exactly 1/|A|.
  auto ds = murel::synth::generate_dataset(3000, 3, 21);
  std::map<std::string, std::size_t> taken;
  murel::synth::Dataset balanced = ds;
  balanced.records.clear();
  for (const auto& r : ds.records)
    if (taken[r.answer] < 40) {
      taken[r.answer] += 1;
      balanced.records.push_back(r);
    }
  ASSERT_EQ(taken.size(), ds.answers.size());
  for (const auto& [a, n] : taken) ASSERT_EQ(n, 40u) << a;
  fs::path d = scratch("chance");
  const std::string path = (d / "balanced.jsonl").string();
  murel::synth::write_dataset(balanced, path, murel::synth::default_sidecar_path(path));
  ASSERT_EQ(run("train --data " + (tiny_data() / "dataset.jsonl").string() + " --epochs 0 --out " + d.string()).code, 0);
  fs::path rd = only_run_dir(d);
  fs::path e = d / "eval";
  ASSERT_EQ(run("eval --checkpoint " + (rd / "checkpoint.json").string() + " --data " + path + " --out " + e.string()).code, 0);
  auto eval = nlohmann::json::parse(read_file(e / "eval.json"));
  const double acc = eval["report"]["overall"].get<double>();
  EXPECT_NEAR(acc, 1.0 / static_cast<double>(ds.answers.size()), 0.05);
}

TEST(Cli, VizWritesOneSvgPerStep) {
  const std::string data = (tiny_data() / "dataset.jsonl").string();
  fs::path d = scratch("viz");
  ASSERT_EQ(run("train --data " + data + " --epochs 1 --steps 3 --out " + d.string()).code, 0);
  fs::path rd = only_run_dir(d);
  fs::path a = d / "viz_a", b = d / "viz_b";
  ASSERT_EQ(run("viz --checkpoint " + (rd / "checkpoint.json").string() + " --data " + data + " --index 0 --out " + a.string()).code, 0);
  ASSERT_EQ(run("viz --checkpoint " + (rd / "checkpoint.json").string() + " --data " + data + " --index 0 --out " + b.string()).code, 0);
  for (const char* f : {"step1.svg", "step2.svg", "step3.svg", "report.json"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  }
  EXPECT_FALSE(fs::exists(a / "step4.svg"));
  EXPECT_EQ(manifests_in(a), 1u);
  EXPECT_EQ(run("viz --checkpoint " + (rd / "checkpoint.json").string() + " --data " + data + " --index 100000 --out " + a.string()).code, 2);
}
