// Command-line driver: simulate -> featurize -> select-features -> train ->
// evaluate -> benchmark -> matchmake -> report.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cbal/analysis.hpp"
#include "cbal/error.hpp"
#include "cbal/harness.hpp"
#include "cbal/matchlog.hpp"
#include "cbal/matchmaker.hpp"

namespace fs = std::filesystem;
using namespace cbal;

namespace {

struct RunConfig {
  std::string out = "out";
  std::string log;
  std::string mask;
  std::vector<std::string> model_files;
  std::uint64_t seed = 1;
  std::string mode = "3v3";
  double theta = 3.0;
  double omega = 0.3;
  std::size_t k_days = 86;
  std::string models = "dummy,avgskill,linear,linear+,rndfrst,mlp,mlp+,logistic,mlp_softmax";
  bool best_subset = false;
  std::string roles = "defense,left_wing,right_wing";
  std::string actions = "goal,assist,hit,takeaway";

  PopulationConfig pop;

  std::size_t trees = 100;
  std::size_t max_depth = 8;
  std::size_t min_leaf = 5;
  std::string hidden = "64,32";
  double learning_rate = 1e-3;
  std::size_t batch = 256;
  std::size_t epochs = 200;
  std::size_t patience = 5;

  double r_max = 0.95;
  std::size_t rfe_keep = 10;
  std::size_t repetitions = 20;

  std::size_t session_matches = 10000;
  std::size_t max_attempts = 10;
  double arrivals = 4.5;
  bool compare = false;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::size_t team_size_for(const std::string& mode) {
  if (mode == "3v3") return 3;
  if (mode == "6v6") return 6;
  throw ConfigError("mode must be 3v3 or 6v6, got '" + mode + "'");
}

PopulationConfig population_config(const RunConfig& rc) {
  PopulationConfig p = rc.pop;
  p.seed = rc.seed;
  p.team_size = team_size_for(rc.mode);
  p.roles = split_list(rc.roles);
  p.actions = split_list(rc.actions);
  p.validate();
  return p;
}

FeatureConfig feature_config(const RunConfig& rc) {
  FeatureConfig f;
  f.roles = split_list(rc.roles);
  f.actions = split_list(rc.actions);
  return f;
}

EvalConfig eval_config(const RunConfig& rc) {
  EvalConfig e;
  e.thresholds = {rc.theta, rc.omega};
  e.thresholds.validate();
  e.k_days = rc.k_days;
  e.seed = rc.seed;
  e.forest.n_trees = rc.trees;
  e.forest.max_depth = rc.max_depth;
  e.forest.min_leaf = rc.min_leaf;
  e.mlp.hidden.clear();
  for (const auto& w : split_list(rc.hidden)) e.mlp.hidden.push_back(std::stoul(w));
  e.mlp.learning_rate = rc.learning_rate;
  e.mlp.batch_size = rc.batch;
  e.mlp.max_epochs = rc.epochs;
  e.mlp.patience = rc.patience;
  e.subset.r_max = rc.r_max;
  return e;
}

std::vector<ModelSpec> model_specs(const RunConfig& rc) {
  std::vector<ModelSpec> specs;
  for (const auto& name : split_list(rc.models)) {
    auto s = ModelSpec::parse(name);
    if (rc.best_subset && !s.oracle && s.kind != ModelKind::Dummy &&
        s.kind != ModelKind::AvgSkill) {
      s.best_subset = true;
    }
    if (std::none_of(specs.begin(), specs.end(),
                     [&](const ModelSpec& o) { return o.name() == s.name(); })) {
      specs.push_back(s);
    }
  }
  if (specs.empty()) throw ConfigError("no models requested");
  return specs;
}

fs::path out_dir(const RunConfig& rc) {
  fs::create_directories(rc.out);
  return fs::path(rc.out);
}

std::string log_path(const RunConfig& rc) {
  return rc.log.empty() ? (fs::path(rc.out) / "matchlog.jsonl").string() : rc.log;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw FormatError("failed writing '" + path.string() + "'");
}

Dataset load_dataset(const RunConfig& rc) {
  const auto fc = feature_config(rc);
  const auto log = read_matchlog_file(log_path(rc), fc.vocabulary());
  if (log.empty()) throw EvaluationError("match log is empty");
  return build_dataset(log, fc);
}

std::string model_file_name(const ModelSpec& spec) {
  std::string name = spec.name();
  std::transform(name.begin(), name.end(), name.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (!name.empty() && name.back() == '+') {
    name.pop_back();
    name += "_plus";
  }
  return name + ".cbm";
}

/// Mask from --mask, else <out>/mask.json, else selected on the first window.
std::optional<FeatureMask> resolve_mask(const RunConfig& rc, const Dataset& data,
                                        const EvalConfig& ec, bool needed) {
  fs::path path = rc.mask.empty() ? fs::path(rc.out) / "mask.json" : fs::path(rc.mask);
  if (fs::exists(path)) return FeatureMask::from_json(read_text(path), *data.schema);
  if (!rc.mask.empty()) throw FormatError("mask file '" + rc.mask + "' not found");
  if (!needed) return std::nullopt;
  const auto [lo, hi] = std::minmax_element(data.day.begin(), data.day.end());
  const auto splits = rolling_splits(*lo, *hi, ec.k_days);
  return select_best_subset(data, splits.front(), ec.thresholds, ec.subset).mask;
}

bool any_best_subset(std::span<const ModelSpec> specs) {
  return std::any_of(specs.begin(), specs.end(), [](const auto& s) { return s.best_subset; });
}

/// Training rows = all days but the last two; validation = the last two.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> final_split(const Dataset& data) {
  const auto [lo, hi] = std::minmax_element(data.day.begin(), data.day.end());
  if (*hi - *lo < 2) throw EvaluationError("log must span at least three days");
  return {data.rows_for_days(*lo, *hi - 2), data.rows_for_days(*hi - 1, *hi)};
}

// ---------------------------------------------------------------- subcommands

void cmd_simulate(const RunConfig& rc) {
  const auto pc = population_config(rc);
  const auto fc = feature_config(rc);
  const auto dir = out_dir(rc);
  const std::string path = rc.log.empty() ? (dir / "matchlog.jsonl").string() : rc.log;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << kMatchlogHeader << '\n';
  const auto vocab = fc.vocabulary();
  std::size_t n = 0;
  run_season(pc, [&](MatchRecord&& rec) {
    out << match_record_to_json(rec, vocab) << '\n';
    ++n;
  });
  if (!out) throw FormatError("failed writing '" + path + "'");
  std::cout << "wrote " << n << " matches to " << path << '\n';
}

void cmd_featurize(const RunConfig& rc) {
  const auto data = load_dataset(rc);
  const auto dir = out_dir(rc);
  std::ofstream csv(dir / "features.csv", std::ios::binary);
  write_feature_csv(csv, data);
  write_text(dir / "schema.json", data.schema->to_json() + "\n");
  std::cout << "wrote " << data.size() << " rows x " << data.schema->size()
            << " features to " << (dir / "features.csv").string() << '\n';
}

void cmd_select(const RunConfig& rc) {
  const auto data = load_dataset(rc);
  const auto ec = eval_config(rc);
  const auto dir = out_dir(rc);
  const auto [lo, hi] = std::minmax_element(data.day.begin(), data.day.end());
  const auto splits = rolling_splits(*lo, *hi, ec.k_days);
  const auto sel = select_best_subset(data, splits.front(), ec.thresholds, ec.subset);
  write_text(dir / "mask.json", sel.mask.to_json(*data.schema) + "\n");
  {
    std::ofstream rank(dir / "rfe_ranking.csv", std::ios::binary);
    rank << "rank,feature\n";
    for (std::size_t i = 0; i < sel.ranking.size(); ++i) {
      rank << i + 1 << ',' << data.schema->names()[sel.ranking[i]] << '\n';
    }
  }
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto report = significance_analysis(data, all, rc.r_max, rc.rfe_keep);
  std::ofstream csv(dir / "significance.csv", std::ios::binary);
  write_significance_csv(csv, report);
  const auto table = significance_table(report);
  write_text(dir / "significance.txt", table);
  std::cout << "best subset: " << sel.mask.count() << " of " << data.schema->size()
            << " features\n"
            << table;
}

void cmd_train(const RunConfig& rc) {
  const auto data = load_dataset(rc);
  const auto ec = eval_config(rc);
  const auto specs = model_specs(rc);
  const auto mask = resolve_mask(rc, data, ec, any_best_subset(specs));
  const auto [train, val] = final_split(data);
  const auto dir = out_dir(rc) / "models";
  fs::create_directories(dir);
  for (const auto& spec : specs) {
    if (spec.oracle) continue;
    const auto model = fit_model(spec, data, train, val, ec, mask ? &*mask : nullptr,
                                 derive_seed(rc.seed, "train/" + spec.name()));
    const auto path = dir / model_file_name(spec);
    save_model(path.string(), model);
    std::cout << "saved " << spec.name() << " -> " << path.string() << '\n';
  }
  write_text(dir / "schema.json", data.schema->to_json() + "\n");
}

void cmd_evaluate(const RunConfig& rc) {
  const auto data = load_dataset(rc);
  auto ec = eval_config(rc);
  const auto dir = out_dir(rc);
  EvalReport report;
  if (!rc.model_files.empty()) {
    std::vector<TrainedModel> models;
    std::vector<std::string> names;
    for (const auto& f : rc.model_files) {
      models.push_back(load_model(f));
      const auto it = models.back().metadata.find("name");
      names.push_back(it != models.back().metadata.end() ? it->second : fs::path(f).stem().string());
    }
    report = evaluate_fixed(data, models, names, ec);
  } else {
    const auto specs = model_specs(rc);
    ec.mask = resolve_mask(rc, data, ec, any_best_subset(specs));
    report = evaluate(data, specs, ec);
  }
  std::ofstream csv(dir / "eval.csv", std::ios::binary);
  write_eval_csv(csv, report);
  write_text(dir / "eval.json", eval_to_json(report));
  const auto table = eval_table(report);
  write_text(dir / "eval.txt", table);
  std::cout << table;
}

void cmd_benchmark(const RunConfig& rc) {
  const auto data = load_dataset(rc);
  auto ec = eval_config(rc);
  const auto specs = model_specs(rc);
  ec.mask = resolve_mask(rc, data, ec, any_best_subset(specs));
  const auto [lo, hi] = std::minmax_element(data.day.begin(), data.day.end());
  if (*hi - *lo < 3) throw EvaluationError("log must span at least four days");
  const auto train = data.rows_for_days(*lo, *hi - 3);
  const auto val = data.rows_for_days(*hi - 2, *hi - 1);
  const auto test = data.rows_for_days(*hi, *hi);
  const auto report = benchmark(data, specs, train, val, test, ec, rc.repetitions);
  const auto dir = out_dir(rc);
  std::ofstream csv(dir / "timing.csv", std::ios::binary);
  write_timing_csv(csv, report);
  write_text(dir / "timing.json", timing_to_json(report));
  const auto table = timing_table(report);
  write_text(dir / "timing.txt", table);
  std::cout << table;
}

void cmd_matchmake(const RunConfig& rc) {
  const auto pc = population_config(rc);
  const auto fc = feature_config(rc);
  const auto vocab = fc.vocabulary();
  const auto log = read_matchlog_file(log_path(rc), vocab);
  const auto dir = out_dir(rc);

  const std::string model_path = rc.model_files.empty()
                                     ? (dir / "models" / "linear_plus.cbm").string()
                                     : rc.model_files.front();
  auto model = std::make_shared<const TrainedModel>(load_model(model_path));
  const auto schema = fc.schema();
  if (model->schema_hash != schema->hash()) {
    throw SchemaError("schema hash mismatch: model '" + model_path + "' expects " +
                      std::to_string(model->schema_hash) + ", features have " +
                      std::to_string(schema->hash()));
  }
  const Population population = generate_population(pc);

  SessionConfig sc;
  sc.matches = rc.session_matches;
  sc.max_attempts = rc.max_attempts;
  sc.arrivals_per_tick = rc.arrivals;
  sc.ticks_per_day = pc.matches_per_day;
  sc.proposal.team_size = pc.team_size;
  sc.proposal.num_roles = pc.roles.size();
  sc.seed = derive_seed(rc.seed, "matchmake");

  const auto run = [&](const GateFn& gate, std::ostream* out) {
    ProfileStore store(fc.roles.size(), fc.actions.size());
    for (const auto& rec : log) store.apply(rec);
    sc.first_day = std::max<std::int64_t>(0, store.max_day_applied() + 1);
    return run_matchmaking(population, store, fc, gate, sc, out);
  };

  std::ofstream session(dir / "session.jsonl", std::ios::binary);
  const auto gated = run(model_gate(model, {rc.theta, rc.omega}), &session);
  nlohmann::ordered_json summary;
  const auto to_json = [](const SessionSummary& s) {
    return nlohmann::ordered_json{{"launched", s.launched},
                                  {"proposals", s.proposals},
                                  {"accepted", s.accepted},
                                  {"rejected", s.rejected},
                                  {"fallbacks", s.fallbacks},
                                  {"ticks", s.ticks},
                                  {"mean_abs_score_diff", s.mean_abs_score_diff},
                                  {"mean_wait_ticks", s.mean_wait_ticks}};
  };
  summary["gated"] = to_json(gated);
  std::cout << "gated: " << gated.launched << " matches, mean |score_diff| "
            << gated.mean_abs_score_diff << ", fallbacks " << gated.fallbacks << '\n';
  if (rc.compare) {
    const auto open = run(accept_all_gate(), nullptr);
    summary["gate_free"] = to_json(open);
    std::cout << "gate-free: " << open.launched << " matches, mean |score_diff| "
              << open.mean_abs_score_diff << '\n';
  }
  write_text(dir / "session_summary.json", summary.dump(2) + "\n");
}

void cmd_report(const RunConfig& rc) {
  const auto dir = fs::path(rc.out);
  bool any = false;
  if (fs::exists(dir / "eval.json")) {
    std::cout << "Competitive balance F1 (groups of 20 test matches)\n"
              << eval_table(eval_from_json(read_text(dir / "eval.json"))) << '\n';
    any = true;
  }
  if (fs::exists(dir / "timing.json")) {
    std::cout << "Training and single-match inference time\n"
              << timing_table(timing_from_json(read_text(dir / "timing.json"))) << '\n';
    any = true;
  }
  if (fs::exists(dir / "significance.txt")) {
    std::cout << "Significant features (OLS on |score_diff|)\n"
              << read_text(dir / "significance.txt") << '\n';
    any = true;
  }
  if (fs::exists(dir / "session_summary.json")) {
    std::cout << "Matchmaking session\n" << read_text(dir / "session_summary.json") << '\n';
    any = true;
  }
  if (!any) throw FormatError("no reports found in '" + dir.string() + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Competitive balance toolkit.\n"
      "Option precedence: command-line flags override keys from the --config INI file,\n"
      "which override built-in defaults. All outputs go under --out."};
  app.config_formatter(std::make_shared<CLI::ConfigINI>());
  app.set_config("--config", "", "INI file with key = value lines (keys are long flag names)");
  app.require_subcommand(1);
  app.fallthrough();

  RunConfig rc;
  auto& p = rc.pop;
  app.add_option("--out", rc.out, "Output directory")->capture_default_str();
  app.add_option("--log", rc.log, "Match log path (default <out>/matchlog.jsonl)");
  app.add_option("--seed", rc.seed, "Root seed")->capture_default_str();
  app.add_option("--mode", rc.mode, "Game mode")->check(CLI::IsMember({"3v3", "6v6"}))->capture_default_str();
  app.add_option("--theta", rc.theta, "Score-difference balance threshold")->capture_default_str();
  app.add_option("--omega", rc.omega, "Win-probability band half-width")->capture_default_str();
  app.add_option("--k-days", rc.k_days, "Rolling window length K")->capture_default_str();
  app.add_option("--models", rc.models, "Comma-separated model list (suffix + = best subset)")
      ->capture_default_str();
  app.add_flag("--best-subset", rc.best_subset, "Fit every eligible model on the best subset");
  app.add_option("--mask", rc.mask, "Feature mask JSON (default <out>/mask.json if present)");
  app.add_option("--model", rc.model_files, "Saved model file(s) for evaluate / matchmake");
  app.add_option("--roles", rc.roles, "Comma-separated role names")->capture_default_str();
  app.add_option("--actions", rc.actions, "Comma-separated action names")->capture_default_str();

  app.add_option("--players", p.num_players, "Population size")->capture_default_str();
  app.add_option("--days", p.days, "Season length in days")->capture_default_str();
  app.add_option("--matches-per-day", p.matches_per_day, "Matches per day")->capture_default_str();
  app.add_option("--skill-scale", p.skill_scale, "Strength scale of the scoring law")->capture_default_str();
  app.add_option("--dropout-min", p.dropout_rate_min, "Lowest dropout propensity")->capture_default_str();
  app.add_option("--dropout-max", p.dropout_rate_max, "Highest dropout propensity")->capture_default_str();
  app.add_option("--dropout-skew", p.dropout_skew, "Exponent shaping the propensity distribution")->capture_default_str();
  app.add_option("--base-rate", p.base_rate, "Goals per team for equal strength")->capture_default_str();
  app.add_option("--beta", p.beta, "Strength sensitivity of the scoring law")->capture_default_str();
  app.add_option("--rating-noise", p.rating_noise_sd, "Displayed rating noise sd")->capture_default_str();
  app.add_option("--bot-slot-prob", p.bot_slot_prob, "Chance a roster slot is a bot")->capture_default_str();
  app.add_option("--dropout-penalty", p.dropout_penalty, "Strength factor per dropout")->capture_default_str();
  app.add_option("--bot-penalty", p.bot_penalty, "Strength factor per bot slot")->capture_default_str();
  app.add_option("--home-advantage", p.home_advantage, "Log-rate bonus for team 1")->capture_default_str();

  app.add_option("--trees", rc.trees, "Forest size")->capture_default_str();
  app.add_option("--max-depth", rc.max_depth, "Forest tree depth")->capture_default_str();
  app.add_option("--min-leaf", rc.min_leaf, "Forest minimum leaf size")->capture_default_str();
  app.add_option("--hidden", rc.hidden, "MLP hidden widths")->capture_default_str();
  app.add_option("--learning-rate", rc.learning_rate, "MLP learning rate")->capture_default_str();
  app.add_option("--batch-size", rc.batch, "MLP batch size")->capture_default_str();
  app.add_option("--epochs", rc.epochs, "MLP epoch budget")->capture_default_str();
  app.add_option("--patience", rc.patience, "MLP early-stopping patience")->capture_default_str();
  app.add_option("--r-max", rc.r_max, "Correlation pruning cutoff")->capture_default_str();
  app.add_option("--rfe-keep", rc.rfe_keep, "RFE survivors reported by select-features")->capture_default_str();
  app.add_option("--repetitions", rc.repetitions, "Timed inference passes")->capture_default_str();
  app.add_option("--matches", rc.session_matches, "Matches to launch in matchmake")->capture_default_str();
  app.add_option("--max-attempts", rc.max_attempts, "Proposals per launch before fallback")->capture_default_str();
  app.add_option("--arrivals", rc.arrivals, "Mean queue arrivals per tick")->capture_default_str();
  app.add_flag("--compare", rc.compare, "Also run gate-free matchmaking for comparison");

  struct Command {
    const char* name;
    const char* help;
    void (*run)(const RunConfig&);
  };
  const Command commands[] = {
      {"simulate", "Generate a seeded season and write the match log", cmd_simulate},
      {"featurize", "Build match features and write features.csv and schema.json", cmd_featurize},
      {"select-features", "Select the best feature subset and write the significance report",
       cmd_select},
      {"train", "Fit models on the log and write model files", cmd_train},
      {"evaluate", "Rolling-window F1 evaluation", cmd_evaluate},
      {"benchmark", "Training and inference timing", cmd_benchmark},
      {"matchmake", "Run a gated matchmaking session", cmd_matchmake},
      {"report", "Print tables from the reports under --out", cmd_report},
  };
  for (const auto& c : commands) app.add_subcommand(c.name, c.help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (const auto& c : commands) {
      if (app.got_subcommand(c.name)) c.run(rc);
    }
  } catch (const std::exception& e) {
    std::cerr << "cbal: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
