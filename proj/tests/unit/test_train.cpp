#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "murel/errors.hpp"
#include "murel/train.hpp"

using namespace murel;
namespace fs = std::filesystem;

namespace {

const synth::Dataset& small_dataset() {
  static const synth::Dataset ds = synth::generate_dataset(60, 3, 0);
  return ds;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.model.steps = 2;
  return c;
}

}  // namespace

TEST(TrainConfig, JsonRoundTripAndHash) {
  TrainConfig c = quick_config(3);
  c.learning_rate = 2e-3;
  c.model.pairwise = false;
  TrainConfig back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_EQ(config_hash(back), config_hash(c));
  c.seed = 1;
  EXPECT_NE(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
}

TEST(TrainConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(train_config_from_json(ordered_json{{"epochz", 3}}), DataError);
  EXPECT_THROW(train_config_from_json(ordered_json{{"batch_size", 0}}), DataError);
  EXPECT_THROW(train_config_from_json(ordered_json{{"model", {{"steps", 0}}}}), DataError);
  EXPECT_THROW(train_config_from_json(ordered_json{{"variant", "resnet"}}), DataError);
}

TEST(Split, ByScenePartition) {
  const auto& ds = small_dataset();
  Split s = split_by_scene(ds, 3);
  std::set<std::size_t> all;
  std::map<std::size_t, int> scene_split;
  int which = 0;
  for (const auto* part : {&s.train, &s.validation, &s.test}) {
    for (auto i : *part) {
      EXPECT_TRUE(all.insert(i).second);
      auto [it, fresh] = scene_split.emplace(ds.records[i].scene_id, which);
      EXPECT_EQ(it->second, which);
    }
    ++which;
  }
  EXPECT_EQ(all.size(), ds.records.size());
  EXPECT_EQ(scene_split.size(), 60u);
  EXPECT_EQ(s.validation.size(), 6u * 3);
  EXPECT_EQ(s.test.size(), 6u * 3);
  EXPECT_EQ(split_by_scene(ds, 3).train, s.train);
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  const auto& ds = small_dataset();
  TrainConfig c = quick_config(0);
  TrainResult r = train(ds, c);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.best_epoch, 0u);
  Model fresh(c, ds.vocab, ds.answers, 32);
  EXPECT_EQ(checkpoint_to_string(r.model.params()), checkpoint_to_string(fresh.params()));
  EXPECT_EQ(r.validation.items, 18u);
}

TEST(Train, DeterministicForSameSeed) {
  const auto& ds = small_dataset();
  TrainConfig c = quick_config(2);
  TrainResult a = train(ds, c), b = train(ds, c);
  EXPECT_EQ(a.validation.overall, b.validation.overall);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(checkpoint_to_string(a.model.params()), checkpoint_to_string(b.model.params()));
}

TEST(Train, ReportArithmetic) {
  const auto& ds = small_dataset();
  TrainResult r = train(ds, quick_config(1));
  for (const EvalReport* rep : {&r.validation, &r.test}) {
    std::size_t total = 0, diagonal = 0;
    for (const auto& [truth, row] : rep->confusion)
      for (const auto& [pred, n] : row) {
        total += n;
        if (truth == pred) diagonal += n;
      }
    EXPECT_EQ(total, rep->items);
    EXPECT_EQ(static_cast<double>(diagonal) / static_cast<double>(total), rep->overall);
    double weighted = 0;
    for (const auto& [fam, n] : rep->family_items) weighted += rep->per_family.at(fam) * static_cast<double>(n);
    EXPECT_NEAR(weighted / static_cast<double>(rep->items), rep->overall, 1e-15);
  }
}

TEST(Train, CheckpointRoundTripReproducesValidation) {
  const auto& ds = small_dataset();
  TrainResult r = train(ds, quick_config(2));
  fs::path dir = fs::temp_directory_path() / "murel_test_model";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_model(r.model, dir.string());
  Model back = load_model((dir / "checkpoint.json").string());
  PreparedData data = prepare(ds, back.vocab(), back.answers());
  EvalReport again = evaluate(back, ds, data, r.split.validation);
  EXPECT_EQ(again.overall, r.validation.overall);
  EXPECT_EQ(to_json(again).dump(), to_json(r.validation).dump());
  EXPECT_EQ(checkpoint_to_string(back.params()), checkpoint_to_string(r.model.params()));
  EXPECT_THROW(load_model((dir / "absent.json").string()), FileError);
  fs::remove_all(dir);
}

TEST(Train, AttentionVariantTrains) {
  const auto& ds = small_dataset();
  TrainConfig c = quick_config(1);
  c.variant = Variant::attention_baseline;
  TrainResult r = train(ds, c);
  Model murel(quick_config(1), ds.vocab, ds.answers, 32);
  const double ratio = static_cast<double>(r.model.answer_model_parameter_count()) /
                       static_cast<double>(murel.answer_model_parameter_count());
  EXPECT_GT(ratio, 0.9);
  EXPECT_LT(ratio, 1.1);
  EXPECT_EQ(r.history.size(), 1u);
}

TEST(Train, OverfitsThirtyTwoItems) {
  const auto& ds = small_dataset();
  TrainConfig c = quick_config(200);
  c.train_limit = 32;
  c.report_every = 200;
  TrainResult r = train(ds, c);
  std::vector<std::size_t> items(r.split.train.begin(), r.split.train.begin() + 32);
  EXPECT_EQ(accuracy_on(r.model, ds, items), 1.0);
}

TEST(Train, NonFiniteLossNamesATensor) {
  const auto& ds = small_dataset();
  TrainConfig c = quick_config(3);
  c.learning_rate = 1e300;
  try {
    train(ds, c);
    FAIL() << "expected a non-finite loss";
  } catch (const StateError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("non-finite"), std::string::npos) << msg;
    EXPECT_TRUE(msg.find("parameter '") != std::string::npos || msg.find("tensor is '") != std::string::npos) << msg;
  }
}

TEST(Train, LossDecreasesOnDefaultDataset) {
  const auto ds = synth::generate_dataset(5000, 3, 0);
  TrainConfig c;
  c.epochs = 6;
  c.report_every = 6;
  TrainResult r = train(ds, c);
  ASSERT_EQ(r.history.size(), 6u);
  EXPECT_LT(r.history[5].train_loss, r.history[0].train_loss);
}

TEST(Ablation, GridEnumerationAndParameterCounts) {
  const auto& ds = small_dataset();
  TrainConfig base = quick_config(1);
  AblationOptions opt;
  opt.seeds = {0, 1};
  std::size_t callbacks = 0;
  opt.on_run = [&](const TrainResult&, const std::string&) { ++callbacks; };
  AblationTable t = run_ablation_grid(ds, base, opt);
  ASSERT_EQ(t.rows.size(), 8u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(t.rows[i].group, "grid");
  for (std::size_t i = 4; i < 8; ++i) {
    EXPECT_EQ(t.rows[i].group, "sweep");
    EXPECT_EQ(t.rows[i].steps, i - 3);
    EXPECT_EQ(t.rows[i].parameter_count, t.rows[4].parameter_count);
  }
  EXPECT_EQ(t.rows[0].parameter_count, t.rows[2].parameter_count);
  // 4 grid cells + T=2 and T=4 sweep cells, plus attention, per seed.
  EXPECT_EQ(t.runs.size(), 7u * 2);
  EXPECT_EQ(callbacks, t.runs.size());
  for (const auto& row : t.rows) {
    ASSERT_EQ(row.accuracy.at("overall").size(), 2u);
    const auto& v = row.accuracy.at("overall");
    EXPECT_DOUBLE_EQ(row.mean("overall"), (v[0] + v[1]) / 2);
    EXPECT_NEAR(row.stddev("overall"), std::abs(v[0] - v[1]) / 2, 1e-15);
  }
  EXPECT_EQ(t.attention.variant, Variant::attention_baseline);
  const std::string tsv = ablation_tsv(t);
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 10);
  EXPECT_EQ(to_json(t, base).dump(), to_json(run_ablation_grid(ds, base, opt), base).dump());
}
