// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "../support/oracles.hpp"
#include "cbal/analysis.hpp"
#include "cbal/error.hpp"
#include "cbal/harness.hpp"
#include "cbal/matchmaker.hpp"

namespace fs = std::filesystem;
using namespace cbal;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.setf(std::ios::scientific);
  s.precision(2);
  s << v;
  return s.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void run(int id, const std::string& title, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << ": " << title << " ("
            << o.detail << ")" << std::endl;
}

// The seeded season shared by criteria 6 to 10.
struct World {
  Season season;
  FeatureConfig features;
  Dataset data;
  EvalConfig eval;
  std::optional<EvalReport> report;
  double eval_seconds = 0.0;
};

constexpr std::uint64_t kSeed = 1;
constexpr std::size_t kWindow = 86;

World& world() {
  static World w = [] {
    World w;
    PopulationConfig pc;
    pc.seed = kSeed;
    w.season = run_season(pc);
    w.data = build_dataset(w.season.matches, w.features);
    w.eval.k_days = kWindow;
    w.eval.seed = kSeed;
    return w;
  }();
  return w;
}

const ModelScore& score(const EvalReport& r, const std::string& name) {
  for (const auto& m : r.models) {
    if (m.name == name) return m;
  }
  throw std::runtime_error("model missing from report: " + name);
}

const EvalReport& season_report() {
  auto& w = world();
  if (!w.report) {
    std::vector<ModelSpec> specs;
    for (const char* n :
         {"dummy", "avgskill", "linear", "linear+", "logistic", "mlp", "mlp+", "mlp_softmax"}) {
      specs.push_back(ModelSpec::parse(n));
    }
    const auto t0 = Clock::now();
    w.report = evaluate(w.data, specs, w.eval);
    w.eval_seconds = seconds_since(t0);
  }
  return *w.report;
}

// ---------------------------------------------------------------------------

Outcome ols_oracle_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix x = testing::random_matrix(50, 5, rng);
    std::vector<double> y(50);
    for (auto& v : y) v = rng.normal(0.0, 3.0);
    const auto got = solve_least_squares(x, y, 0.0);
    const auto want = testing::ols_oracle(x, y);
    for (std::size_t i = 0; i < want.size(); ++i) {
      worst = std::max(worst, std::fabs(got[i] - want[i]) / std::max(1.0, std::fabs(want[i])));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 10.0,
          "max rel err " + sci(worst) + ", " + fmt(secs, 2) + " s"};
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  Rng rng(202);
  double worst = 0.0;
  const std::vector<std::size_t> hidden{7, 5};
  for (MlpHead head : {MlpHead::Regression, MlpHead::Softmax}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto params = init_mlp(6, hidden, head, rng);
      testing::jitter_biases(params, rng);
      const Matrix x = testing::random_matrix(16, 6, rng);
      std::vector<double> y(16);
      for (auto& v : y) {
        v = head == MlpHead::Softmax ? static_cast<double>(rng.uniform_index(2)) : rng.normal(0, 2);
      }
      for (double e : testing::mlp_gradient_errors(params, x, y, 1e-5)) worst = std::max(worst, e);
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0,
          "max rel err " + sci(worst) + " over both heads, " + fmt(secs, 2) + " s"};
}

Outcome threshold_semantics() {
  const double theta = 3.0;
  const double omega = 0.3;
  const double eps = 1e-9;
  struct Case {
    double v;
    int want;
  };
  int bad = 0;
  for (const Case& c : {Case{-theta, 0}, Case{0.0, 1}, Case{theta - eps, 1}, Case{theta, 0},
                        Case{-(theta - eps), 1}, Case{std::nextafter(theta, 0.0), 1}}) {
    if (classify_balance(c.v, theta) != c.want) ++bad;
  }
  for (const Case& c :
       {Case{0.5, 1}, Case{0.5 + omega, 1}, Case{0.5 - omega, 1}, Case{0.5 + omega + eps, 0},
        Case{0.5 - omega - eps, 0}, Case{0.5 + omega - eps, 1}, Case{0.5 - omega + eps, 1}}) {
    if (classify_balance_from_prob(c.v, omega) != c.want) ++bad;
  }
  bool threw = false;
  try {
    classify_balance_from_prob(1.5, omega);
  } catch (const DomainError&) {
    threw = true;
  }
  if (!threw) ++bad;
  return {bad == 0, std::to_string(bad) + " mismatches over 14 boundary cases"};
}

Outcome online_offline_equivalence() {
  const auto t0 = Clock::now();
  PopulationConfig pc;
  pc.days = 10;
  pc.seed = 404;
  const auto season = run_season(pc);
  ProfileStore store(pc.roles.size(), pc.actions.size());
  for (const auto& rec : season.matches) store.apply(rec);
  const auto batch = testing::batch_profiles(season.matches, pc.roles.size(), pc.actions.size(),
                                             std::numeric_limits<std::int64_t>::max());
  std::size_t counter_bad = 0;
  double worst = 0.0;
  for (const auto& [id, want] : batch) {
    const auto& got = store.profile(id);
    if (got.num_matches != want.num_matches || got.num_wins != want.num_wins ||
        got.num_dropout != want.num_dropout || got.num_role != want.num_role ||
        got.num_action != want.num_action || got.last_day != want.last_day) {
      ++counter_bad;
    }
    worst = std::max(worst, std::fabs(got.freq_wins - want.freq_wins));
    worst = std::max(worst, std::fabs(got.freq_dropout - want.freq_dropout));
    for (std::size_t r = 0; r < want.freq_role.size(); ++r) {
      worst = std::max(worst, std::fabs(got.freq_role[r] - want.freq_role[r]));
    }
    for (std::size_t a = 0; a < want.avg_num_action.size(); ++a) {
      worst = std::max(worst, std::fabs(got.avg_num_action[a] - want.avg_num_action[a]));
    }
  }
  if (store.num_players() != batch.size()) ++counter_bad;
  const double secs = seconds_since(t0);
  return {counter_bad == 0 && worst <= 1e-12 && secs < 60.0,
          std::to_string(batch.size()) + " players, " + std::to_string(counter_bad) +
              " counter mismatches, max ratio err " + sci(worst) + ", " +
              fmt(secs, 2) + " s"};
}

Outcome rolling_windows_and_leakage() {
  const std::size_t k = 10;
  const auto splits = rolling_splits(1, 30, k);
  bool layout = splits.size() == 21;
  std::map<std::int64_t, int> test_count;
  for (std::size_t w = 0; w < splits.size() && layout; ++w) {
    const auto& s = splits[w];
    const std::int64_t last = 1 + static_cast<std::int64_t>(k) - 1 + static_cast<std::int64_t>(w);
    std::vector<std::int64_t> train;
    for (std::int64_t d = 1; d <= last - 3; ++d) train.push_back(d);
    layout = s.train_days == train &&
             s.validation_days == std::vector<std::int64_t>{last - 2, last - 1} &&
             s.test_days == std::vector<std::int64_t>{last} && train.size() == k - 3 + w;
    test_count[last]++;
  }
  for (std::int64_t d = 10; d <= 30; ++d) layout = layout && test_count[d] == 1;

  PopulationConfig pc;
  pc.days = 31;
  pc.matches_per_day = 60;
  pc.num_players = 600;
  pc.seed = 505;
  auto season = run_season(pc);
  std::vector<MatchRecord> log;
  for (auto& rec : season.matches) {
    if (rec.day_index >= 1) log.push_back(std::move(rec));
  }
  FeatureConfig fc;
  auto data = build_dataset(log, fc);
  std::size_t leaks = 0;
  for (std::size_t i = 0; i < data.size(); ++i) leaks += data.history_max_day[i] >= data.day[i];

  EvalConfig ec;
  ec.k_days = k;
  const std::vector<ModelSpec> specs{ModelSpec::parse("linear")};
  const auto report = evaluate(data, specs, ec);
  const bool windows_ok = report.windows == 21 && report.test_matches == 21 * pc.matches_per_day;

  // A row whose history reaches its own day must be refused.
  auto tampered = data;
  for (std::size_t i = 0; i < tampered.size(); ++i) {
    if (tampered.day[i] == 20) {
      tampered.history_max_day[i] = 20;
      break;
    }
  }
  bool guard = false;
  try {
    evaluate(tampered, specs, ec);
  } catch (const InvariantError&) {
    guard = true;
  }
  return {layout && leaks == 0 && windows_ok && guard,
          std::string("layout ") + (layout ? "ok" : "wrong") + ", " + std::to_string(leaks) +
              " leaking rows of " + std::to_string(data.size()) + ", " +
              std::to_string(report.windows) + " windows, guard " + (guard ? "fires" : "silent")};
}

Outcome table_ordering() {
  const auto& r = season_report();
  const auto& w = world();
  const double mlp_plus = score(r, "MLP+").f1_mean;
  const double lin_plus = score(r, "Linear+").f1_mean;
  const double avg = score(r, "AvgSkill").f1_mean;

  // Degenerate Dummy: a home advantage pushes the training mean past theta.
  PopulationConfig pc;
  pc.seed = kSeed;
  pc.home_advantage = 1.0;
  const auto skewed = run_season(pc);
  const auto skewed_data = build_dataset(skewed.matches, w.features);
  const std::vector<ModelSpec> dummy{ModelSpec::parse("dummy")};
  const auto t0 = Clock::now();
  const auto dr = evaluate(skewed_data, dummy, w.eval);
  const double secs = w.eval_seconds + seconds_since(t0);
  const auto& d = dr.models.front();
  double min_mean = std::numeric_limits<double>::infinity();
  for (double m : d.window_train_mean) min_mean = std::min(min_mean, std::fabs(m));
  const bool degenerate = min_mean >= w.eval.thresholds.theta && d.f1_mean == 0.0;

  const bool pass = mlp_plus >= lin_plus && lin_plus >= avg + 0.05 && degenerate &&
                    w.data.size() >= 20000 && secs < 900.0;
  return {pass, "MLP+ " + fmt(mlp_plus) + ", Linear+ " + fmt(lin_plus) + ", AvgSkill " +
                    fmt(avg) + ", Dummy(train |mean| " + fmt(min_mean, 2) + ") " +
                    fmt(d.f1_mean, 2) + ", " + std::to_string(w.data.size()) + " matches, " +
                    fmt(secs, 1) + " s"};
}

Outcome regression_beats_classification() {
  const auto& r = season_report();
  const double lin = score(r, "Linear").f1_mean;
  const double logi = score(r, "Logistic").f1_mean;
  const double mlp = score(r, "MLP").f1_mean;
  const double soft = score(r, "MLPSoftmax").f1_mean;
  return {lin >= logi && mlp >= soft, "Linear " + fmt(lin) + " vs Logistic " + fmt(logi) +
                                          ", MLP " + fmt(mlp) + " vs MLPSoftmax " + fmt(soft)};
}

Outcome timing_claim() {
  const auto& w = world();
  const auto splits = rolling_splits(0, static_cast<std::int64_t>(w.season.population.config.days) - 1,
                                     w.eval.k_days);
  const auto& s = splits.back();
  const auto train = w.data.rows_for_days(s.train_days.front(), s.train_days.back());
  const auto val = w.data.rows_for_days(s.validation_days.front(), s.validation_days.back());
  const auto test = w.data.rows_for_days(s.test_days.front(), s.test_days.back());
  const std::vector<ModelSpec> specs{ModelSpec::parse("linear"), ModelSpec::parse("mlp")};
  const auto t = benchmark(w.data, specs, train, val, test, w.eval, 20);
  const auto& lin = t.rows[0];
  const auto& mlp = t.rows[1];
  const double infer = mlp.inference_mean / lin.inference_mean;
  const double fit = mlp.train_seconds / lin.train_seconds;
  return {infer >= 10.0 && fit >= 5.0 && lin.repetitions >= 20,
          "inference " + fmt(infer, 1) + "x, training " + fmt(fit, 1) + "x, " +
              std::to_string(lin.repetitions) + " repetitions"};
}

Outcome significance_sign() {
  const auto& w = world();
  std::vector<std::size_t> rows(w.data.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto rep = significance_analysis(w.data, rows, 0.95, 10);
  const SignificanceRow* hit = nullptr;
  for (const auto& r : rep.rows) {
    if (r.feature == "avg_freq_dropout") hit = &r;
  }
  bool in_top = false;
  for (const auto& f : rep.rfe_top) in_top = in_top || f == "avg_freq_dropout";
  if (!hit) return {false, "avg_freq_dropout not in the regression"};
  return {hit->coefficient > 0.0 && hit->p_value < 1e-3 && in_top,
          "coef " + fmt(hit->coefficient) + ", p " + fmt(hit->p_value, 6) + ", RFE top 10 " +
              (in_top ? "yes" : "no")};
}

Outcome matchmaker_efficacy() {
  const auto t0 = Clock::now();
  auto& w = world();
  const auto& r = season_report();
  const std::int64_t last = static_cast<std::int64_t>(w.season.population.config.days) - 1;
  const auto train = w.data.rows_for_days(0, last - 2);
  const auto val = w.data.rows_for_days(last - 1, last);
  const auto model = std::make_shared<const TrainedModel>(
      fit_model(ModelSpec::parse("linear+"), w.data, train, val, w.eval,
                r.mask ? &*r.mask : nullptr, derive_seed(kSeed, "acceptance/linear+")));

  SessionConfig sc;
  sc.matches = 10000;
  sc.ticks_per_day = w.season.population.config.matches_per_day;
  sc.first_day = last + 1;
  sc.seed = derive_seed(kSeed, "acceptance/session");
  const auto session = [&](const GateFn& gate) {
    ProfileStore store(w.features.roles.size(), w.features.actions.size());
    for (const auto& rec : w.season.matches) store.apply(rec);
    return run_matchmaking(w.season.population, store, w.features, gate, sc);
  };
  const auto gated = session(model_gate(model, w.eval.thresholds));
  const auto open = session(accept_all_gate());
  const double secs = seconds_since(t0);
  const double cut = 1.0 - gated.mean_abs_score_diff / open.mean_abs_score_diff;
  return {cut >= 0.10 && gated.launched == 10000 && open.launched == 10000 && secs < 600.0,
          "mean |score_diff| " + fmt(gated.mean_abs_score_diff, 3) + " gated vs " +
              fmt(open.mean_abs_score_diff, 3) + " gate-free, reduction " + fmt(100 * cut, 1) +
              "%, " + fmt(secs, 1) + " s"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + CBAL_CLI_PATH + "\" " + args + " > \"" +
                          log.string() + "\" 2>&1";
  return std::system(cmd.c_str()) == 0;
}

Outcome round_trip_and_determinism() {
  auto& w = world();
  const std::int64_t last = static_cast<std::int64_t>(w.season.population.config.days) - 1;
  const auto train = w.data.rows_for_days(last - 9, last - 2);
  const auto val = w.data.rows_for_days(last - 1, last);
  EvalConfig ec = w.eval;
  ec.forest.n_trees = 20;
  ec.mlp.max_epochs = 20;
  Rng rng(1111);
  std::size_t mismatches = 0;
  std::size_t checked = 0;
  for (const char* name : {"linear", "rndfrst", "mlp", "logistic", "mlp_softmax"}) {
    const auto model = fit_model(ModelSpec::parse(name), w.data, train, val, ec, nullptr, 7);
    const auto back = deserialize(serialize(model));
    for (int i = 0; i < 1000; ++i) {
      const auto& src = w.data.x.row(rng.uniform_index(w.data.size()));
      std::vector<double> row(src.begin(), src.end());
      for (auto& v : row) v += rng.normal(0.0, 0.5);
      mismatches += predict(model, row) != predict(back, row);
      ++checked;
    }
  }

  const auto root = fs::temp_directory_path() / "cbal_acceptance_cli";
  fs::remove_all(root);
  const std::string small =
      "--seed 11 --days 12 --matches-per-day 30 --players 300 --k-days 8 --trees 10 "
      "--hidden 16,8 --epochs 10 --matches 300 ";
  bool ran = true;
  for (const char* run : {"a", "b"}) {
    fs::create_directories(root / run);
    const std::string base = "--out \"" + (root / run / "out").string() + "\" " + small;
    for (const char* cmd : {"simulate", "featurize", "select-features", "train", "evaluate",
                            "matchmake --compare"}) {
      ran = ran && cli(base + cmd, root / run / "cli.log");
    }
  }
  std::size_t files = 0;
  std::size_t differ = 0;
  if (ran) {
    for (const auto& e : fs::recursive_directory_iterator(root / "a" / "out")) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), root / "a" / "out");
      const auto other = root / "b" / "out" / rel;
      ++files;
      differ += !fs::exists(other) || slurp(e.path()) != slurp(other);
    }
  }
  return {mismatches == 0 && ran && files > 0 && differ == 0,
          std::to_string(mismatches) + " of " + std::to_string(checked) +
              " predictions changed after reload; CLI " + (ran ? "ran" : "failed") + ", " +
              std::to_string(differ) + " of " + std::to_string(files) + " files differ"};
}

}  // namespace

int main() {
  run(1, "OLS matches the extended-precision oracle", ols_oracle_equivalence);
  run(2, "MLP gradients match central differences", gradient_correctness);
  run(3, "threshold and band boundary semantics", threshold_semantics);
  run(4, "online profile folding equals batch recount", online_offline_equivalence);
  run(5, "rolling windows and leakage guard", rolling_windows_and_leakage);
  run(6, "F1(MLP+) >= F1(Linear+) >= F1(AvgSkill) + 0.05, degenerate Dummy", table_ordering);
  run(7, "regression beats classification", regression_beats_classification);
  run(8, "Linear inference >= 10x and training >= 5x faster than MLP", timing_claim);
  run(9, "dropout rate is a positive significant feature", significance_sign);
  run(10, "gated matchmaking cuts mean |score_diff| by >= 10%", matchmaker_efficacy);
  run(11, "model round trip and CLI determinism", round_trip_and_determinism);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
