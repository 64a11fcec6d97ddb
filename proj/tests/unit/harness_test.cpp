#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "cbal/error.hpp"
#include "cbal/harness.hpp"

namespace {

using cbal::ModelSpec;

std::vector<std::int64_t> range(std::int64_t a, std::int64_t b) {
  std::vector<std::int64_t> out;
  for (auto d = a; d <= b; ++d) out.push_back(d);
  return out;
}

TEST(HarnessTest, RollingSplitsFirstWindow) {
  auto s = cbal::rolling_splits(1, 10, 10);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].train_days, range(1, 7));
  EXPECT_EQ(s[0].validation_days, (std::vector<std::int64_t>{8, 9}));
  EXPECT_EQ(s[0].test_days, (std::vector<std::int64_t>{10}));
}

TEST(HarnessTest, RollingSplitsShiftByOneDay) {
  auto s = cbal::rolling_splits(1, 11, 10);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[1].index, 1u);
  EXPECT_EQ(s[1].train_days, range(1, 8));
  EXPECT_EQ(s[1].validation_days, (std::vector<std::int64_t>{9, 10}));
  EXPECT_EQ(s[1].test_days, (std::vector<std::int64_t>{11}));
}

TEST(HarnessTest, RollingSplitsMinimalWindow) {
  auto s = cbal::rolling_splits(1, 4, 4);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].train_days, (std::vector<std::int64_t>{1}));
  EXPECT_EQ(s[0].validation_days, (std::vector<std::int64_t>{2, 3}));
  EXPECT_EQ(s[0].test_days, (std::vector<std::int64_t>{4}));
}

TEST(HarnessTest, RollingSplitsErrors) {
  EXPECT_THROW(cbal::rolling_splits(1, 10, 3), cbal::ParameterError);
  EXPECT_THROW(cbal::rolling_splits(1, 5, 6), cbal::ParameterError);
}

TEST(HarnessTest, TestDaysArePartitioned) {
  auto s = cbal::rolling_splits(1, 30, 10);
  std::multiset<std::int64_t> tests;
  for (const auto& w : s) {
    tests.insert(w.test_days.begin(), w.test_days.end());
    std::set<std::int64_t> all(w.train_days.begin(), w.train_days.end());
    for (auto d : w.validation_days) EXPECT_TRUE(all.insert(d).second);
    EXPECT_TRUE(all.insert(w.test_days[0]).second);
    EXPECT_LT(w.train_days.back(), w.validation_days.front());
    EXPECT_LT(w.validation_days.back(), w.test_days.front());
  }
  const auto want = range(10, 30);
  EXPECT_EQ(tests, (std::multiset<std::int64_t>(want.begin(), want.end())));
}

TEST(HarnessTest, F1Examples) {
  std::vector<int> labels{1, 0, 1, 1, 0};
  EXPECT_EQ(cbal::f1(labels, labels), 1.0);
  std::vector<int> none(5, 0);
  EXPECT_EQ(cbal::f1(none, labels), 0.0);
  // tp=2, fp=1, fn=1
  std::vector<int> p{1, 1, 1, 0, 0, 0};
  std::vector<int> l{1, 1, 0, 1, 0, 0};
  EXPECT_NEAR(cbal::f1(p, l), 2.0 / 3.0, 1e-15);
  std::vector<int> shorter{1};
  EXPECT_THROW(cbal::f1(shorter, l), cbal::ParameterError);
}

TEST(HarnessTest, F1IsPermutationInvariant) {
  cbal::Rng rng(1);
  std::vector<int> p(100), l(100);
  for (int i = 0; i < 100; ++i) {
    p[i] = rng.bernoulli(0.5);
    l[i] = rng.bernoulli(0.4);
  }
  const double base = cbal::f1(p, l);
  std::vector<std::size_t> idx(100);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(std::span(idx));
  std::vector<int> p2, l2;
  for (auto i : idx) {
    p2.push_back(p[i]);
    l2.push_back(l[i]);
  }
  EXPECT_EQ(cbal::f1(p2, l2), base);
}

TEST(HarnessTest, GroupedF1DropsPartialGroup) {
  std::vector<int> p(45, 1), l(45, 1);
  for (int i = 20; i < 40; ++i) p[i] = 0;
  auto g = cbal::grouped_f1(p, l, 20);
  ASSERT_EQ(g.values.size(), 2u);
  EXPECT_EQ(g.values[0], 1.0);
  EXPECT_EQ(g.values[1], 0.0);
  EXPECT_EQ(g.mean, 0.5);
  EXPECT_EQ(g.sd, 0.5);
}

TEST(HarnessTest, ModelSpecNames) {
  EXPECT_EQ(ModelSpec::parse("linear+").name(), "Linear+");
  EXPECT_EQ(ModelSpec::parse("rndfrst").name(), "RndFrst");
  EXPECT_EQ(ModelSpec::parse("mlp_softmax").name(), "MLPSoftmax");
  EXPECT_TRUE(ModelSpec::parse("oracle").oracle);
  EXPECT_THROW(ModelSpec::parse("xgboost"), cbal::ParameterError);
}

cbal::Dataset small_data(double home_advantage = 0.0, std::size_t days = 14) {
  cbal::PopulationConfig pc;
  pc.num_players = 400;
  pc.days = days;
  pc.matches_per_day = 120;
  pc.home_advantage = home_advantage;
  auto season = cbal::run_season(pc);
  return cbal::build_dataset(season.matches, cbal::FeatureConfig{});
}

cbal::EvalConfig quick_config() {
  cbal::EvalConfig cfg;
  cfg.k_days = 10;
  cfg.forest.n_trees = 10;
  cfg.mlp.hidden = {8};
  cfg.mlp.max_epochs = 5;
  return cfg;
}

TEST(HarnessTest, OracleScoresPerfectF1) {
  auto data = small_data();
  std::vector<ModelSpec> specs{ModelSpec::parse("oracle")};
  auto report = cbal::evaluate(data, specs, quick_config());
  EXPECT_EQ(report.windows, 5u);
  EXPECT_EQ(report.test_matches, 5u * 120u);
  EXPECT_EQ(report.models[0].f1_mean, 1.0);
  EXPECT_EQ(report.models[0].groups, 5u * 6u);
}

// With a large home advantage the training mean exceeds theta, so Dummy
// labels every match unbalanced.
TEST(HarnessTest, DummyIsDegenerateWhenTrainingMeanExceedsTheta) {
  auto data = small_data(1.5);
  std::vector<ModelSpec> specs{ModelSpec::parse("dummy")};
  auto report = cbal::evaluate(data, specs, quick_config());
  for (double m : report.models[0].window_train_mean) EXPECT_GE(std::fabs(m), 3.0);
  EXPECT_EQ(report.models[0].f1_mean, 0.0);
  EXPECT_EQ(report.models[0].confusion.tp + report.models[0].confusion.fp, 0u);
}

TEST(HarnessTest, ReportCountsAreConsistent) {
  auto data = small_data();
  std::vector<ModelSpec> specs;
  for (const char* n : {"dummy", "avgskill", "linear", "linear+", "rndfrst", "mlp", "logistic",
                        "mlp_softmax"}) {
    specs.push_back(ModelSpec::parse(n));
  }
  auto report = cbal::evaluate(data, specs, quick_config());
  ASSERT_EQ(report.models.size(), specs.size());
  ASSERT_TRUE(report.mask.has_value());
  for (const auto& m : report.models) {
    EXPECT_EQ(m.confusion.total(), report.test_matches) << m.name;
    EXPECT_GE(m.f1_mean, 0.0);
    EXPECT_LE(m.f1_mean, 1.0);
    EXPECT_EQ(m.window_f1.size(), report.windows);
  }
  EXPECT_GT(report.balanced_rate, 0.0);
  EXPECT_LT(report.balanced_rate, 1.0);
}

TEST(HarnessTest, EvaluationIsDeterministicAndSerializable) {
  auto data = small_data();
  std::vector<ModelSpec> specs{ModelSpec::parse("linear"), ModelSpec::parse("mlp")};
  auto a = cbal::evaluate(data, specs, quick_config());
  auto b = cbal::evaluate(data, specs, quick_config());
  EXPECT_EQ(cbal::eval_to_json(a), cbal::eval_to_json(b));
  auto back = cbal::eval_from_json(cbal::eval_to_json(a));
  EXPECT_EQ(cbal::eval_to_json(back), cbal::eval_to_json(a));
  std::ostringstream csv;
  cbal::write_eval_csv(csv, a);
  EXPECT_NE(csv.str().find("Linear"), std::string::npos);
  EXPECT_NE(cbal::eval_table(a).find("MLP"), std::string::npos);
}

TEST(HarnessTest, MissingDayNamesTheWindow) {
  auto data = small_data();
  // Drop every row of day 11, which is the test day of window 1.
  cbal::Dataset gap;
  gap.schema = data.schema;
  gap.x = cbal::Matrix(0, data.schema->size());
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (data.day[r] == 11) continue;
    gap.x.append_row(data.x.row(r));
    gap.score_diff.push_back(data.score_diff[r]);
    gap.day.push_back(data.day[r]);
    gap.match_id.push_back(data.match_id[r]);
    gap.history_max_day.push_back(data.history_max_day[r]);
  }
  std::vector<ModelSpec> specs{ModelSpec::parse("linear")};
  try {
    cbal::evaluate(gap, specs, quick_config());
    FAIL() << "expected EvaluationError";
  } catch (const cbal::EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("window 2"), std::string::npos) << e.what();
  }
}

TEST(HarnessTest, LeakedRowIsRejected) {
  auto data = small_data();
  data.history_max_day.back() = data.day.back();
  std::vector<ModelSpec> specs{ModelSpec::parse("dummy")};
  EXPECT_THROW(cbal::evaluate(data, specs, quick_config()), cbal::InvariantError);
}

TEST(HarnessTest, FixedModelsCheckSchema) {
  auto data = small_data();
  auto rows = data.rows_for_days(0, 8);
  auto val = data.rows_for_days(9, 10);
  auto cfg = quick_config();
  auto model = cbal::fit_model(ModelSpec::parse("linear"), data, rows, val, cfg, nullptr, 1);
  std::vector<cbal::TrainedModel> models{model};
  std::vector<std::string> names{"Linear"};
  auto report = cbal::evaluate_fixed(data, models, names, cfg);
  EXPECT_EQ(report.models[0].confusion.total(), report.test_matches);
  models[0].schema_hash ^= 1;
  EXPECT_THROW(cbal::evaluate_fixed(data, models, names, cfg), cbal::SchemaError);
}

TEST(HarnessTest, BenchmarkHasOneRowPerModel) {
  auto data = small_data();
  auto train = data.rows_for_days(0, 8);
  auto val = data.rows_for_days(9, 10);
  auto test = data.rows_for_days(11, 11);
  std::vector<ModelSpec> specs{ModelSpec::parse("dummy"), ModelSpec::parse("linear"),
                               ModelSpec::parse("mlp")};
  auto report = cbal::benchmark(data, specs, train, val, test, quick_config(), 20);
  ASSERT_EQ(report.rows.size(), 3u);
  for (const auto& r : report.rows) {
    EXPECT_GT(r.train_seconds, 0.0);
    EXPECT_GT(r.inference_mean, 0.0);
    EXPECT_EQ(r.repetitions, 20u);
  }
  auto back = cbal::timing_from_json(cbal::timing_to_json(report));
  EXPECT_EQ(back.rows.size(), 3u);
  EXPECT_EQ(back.rows[1].name, "Linear");
}

}  // namespace
