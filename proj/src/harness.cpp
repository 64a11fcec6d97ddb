#include "cbal/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "cbal/analysis.hpp"
#include "cbal/error.hpp"

namespace cbal {

namespace {

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

std::vector<std::size_t> without_ties(const Dataset& data, std::span<const std::size_t> rows) {
  std::vector<std::size_t> out;
  for (auto r : rows) {
    if (data.score_diff[r] != 0.0) out.push_back(r);
  }
  return out;
}

std::vector<double> targets_for(const Dataset& data, std::span<const std::size_t> rows,
                                bool probability) {
  std::vector<double> y;
  y.reserve(rows.size());
  for (auto r : rows) {
    const double d = data.score_diff[r];
    y.push_back(probability ? (d > 0.0 ? 1.0 : 0.0) : d);
  }
  return y;
}

std::vector<std::size_t> days_to_rows(const Dataset& data, std::span<const std::int64_t> days) {
  if (days.empty()) return {};
  return data.rows_for_days(days.front(), days.back());
}

std::string join_days(std::span<const std::int64_t> days) {
  if (days.empty()) return "[]";
  return "[" + std::to_string(days.front()) + ", " + std::to_string(days.back()) + "]";
}

}  // namespace

std::vector<WindowSplit> rolling_splits(std::int64_t first_day, std::int64_t last_day,
                                        std::size_t k) {
  if (k < 4) throw ParameterError("K must be at least 4");
  if (last_day < first_day ||
      static_cast<std::size_t>(last_day - first_day + 1) < k) {
    throw ParameterError("day span " + std::to_string(last_day - first_day + 1) +
                         " is shorter than K = " + std::to_string(k));
  }
  std::vector<WindowSplit> out;
  const auto kk = static_cast<std::int64_t>(k);
  for (std::int64_t test = first_day + kk - 1; test <= last_day; ++test) {
    WindowSplit s;
    s.index = out.size();
    for (std::int64_t d = first_day; d <= test - 3; ++d) s.train_days.push_back(d);
    s.validation_days = {test - 2, test - 1};
    s.test_days = {test};
    out.push_back(std::move(s));
  }
  return out;
}

double f1(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) {
    throw ParameterError("prediction and label lists differ in length");
  }
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) c.add(preds[i], labels[i]);
  if (c.tp == 0) return 0.0;
  const double precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  const double recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return 2.0 * precision * recall / (precision + recall);
}

void Confusion::add(int pred, int label) {
  if (pred == 1) {
    ++(label == 1 ? tp : fp);
  } else {
    ++(label == 1 ? fn : tn);
  }
}

std::string ModelSpec::name() const {
  if (oracle) return "Oracle";
  std::string base;
  switch (kind) {
    case ModelKind::Dummy: base = "Dummy"; break;
    case ModelKind::AvgSkill: base = "AvgSkill"; break;
    case ModelKind::Linear: base = "Linear"; break;
    case ModelKind::RandomForest: base = "RndFrst"; break;
    case ModelKind::MlpRegressor: base = "MLP"; break;
    case ModelKind::Logistic: base = "Logistic"; break;
    case ModelKind::MlpSoftmax: base = "MLPSoftmax"; break;
  }
  return best_subset ? base + "+" : base;
}

ModelSpec ModelSpec::parse(std::string_view text) {
  ModelSpec s;
  std::string t(text);
  if (!t.empty() && t.back() == '+') {
    s.best_subset = true;
    t.pop_back();
  }
  std::string lower = t;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "oracle") {
    s.oracle = true;
    return s;
  }
  s.kind = parse_model_kind(lower);
  return s;
}

std::vector<int> balance_labels(std::span<const double> score_diff, double theta) {
  std::vector<int> out;
  out.reserve(score_diff.size());
  for (double d : score_diff) out.push_back(classify_balance(d, theta));
  return out;
}

GroupF1 grouped_f1(std::span<const int> preds, std::span<const int> labels, std::size_t group) {
  if (preds.size() != labels.size()) throw ParameterError("prediction and label lists differ");
  if (group == 0) throw ParameterError("group size must be positive");
  GroupF1 g;
  for (std::size_t start = 0; start + group <= preds.size(); start += group) {
    g.values.push_back(f1(preds.subspan(start, group), labels.subspan(start, group)));
  }
  g.mean = mean_of(g.values);
  g.sd = sd_of(g.values);
  return g;
}

int decide_balance(const TrainedModel& model, double output, const BalanceThresholds& t) {
  return targets_probability(model.kind) ? classify_balance_from_prob(output, t.omega)
                                         : classify_balance(output, t.theta);
}

TrainedModel fit_model(const ModelSpec& spec, const Dataset& data,
                       std::span<const std::size_t> train_rows,
                       std::span<const std::size_t> validation_rows, const EvalConfig& cfg,
                       const FeatureMask* mask, std::uint64_t seed) {
  if (spec.oracle) throw ParameterError("the oracle is not a fitted model");
  const bool probability = targets_probability(spec.kind);
  std::vector<std::size_t> train(train_rows.begin(), train_rows.end());
  std::vector<std::size_t> val(validation_rows.begin(), validation_rows.end());
  if (probability) {
    train = without_ties(data, train);
    val = without_ties(data, val);
  }
  if (train.empty()) throw FitError("no training rows");

  FitOptions options;
  options.schema_hash = data.schema->hash();
  if (spec.kind == ModelKind::AvgSkill) {
    options.columns = {data.schema->index_of("t1_avg_skill"),
                       data.schema->index_of("t2_avg_skill")};
  } else if (spec.best_subset && spec.kind != ModelKind::Dummy) {
    if (mask == nullptr) throw ParameterError("best-subset model needs a feature mask");
    if (mask->size() != data.schema->size()) throw SchemaError("mask width mismatch");
    options.columns = mask->indices();
  }

  const Matrix x = data.x.select_rows(train);
  const auto y = targets_for(data, train, probability);
  TrainedModel model;
  switch (spec.kind) {
    case ModelKind::Dummy:
    case ModelKind::AvgSkill:
    case ModelKind::Linear:
    case ModelKind::Logistic:
      model = fit_baseline(spec.kind, x, y, options);
      break;
    case ModelKind::RandomForest: {
      ForestConfig fc = cfg.forest;
      fc.seed = seed;
      model = fit_forest(x, y, fc, options);
      break;
    }
    case ModelKind::MlpRegressor:
    case ModelKind::MlpSoftmax: {
      MlpConfig mc = cfg.mlp;
      mc.seed = seed;
      const Matrix vx = data.x.select_rows(val);
      const auto vy = targets_for(data, val, probability);
      std::optional<ValidationSet> vs;
      if (!val.empty()) vs = ValidationSet{&vx, vy};
      model = fit_mlp(x, y, mc,
                      spec.kind == ModelKind::MlpSoftmax ? MlpHead::Softmax : MlpHead::Regression,
                      options, vs);
      break;
    }
  }
  if (!train.empty()) {
    model.metadata["train_first_day"] = std::to_string(data.day[train.front()]);
    model.metadata["train_last_day"] = std::to_string(data.day[train.back()]);
  }
  model.metadata["train_rows"] = std::to_string(train.size());
  model.metadata["name"] = spec.name();
  return model;
}

SubsetSelection select_best_subset(const Dataset& data, const WindowSplit& split,
                                   const BalanceThresholds& thresholds, const SubsetConfig& cfg) {
  const auto train = days_to_rows(data, split.train_days);
  const auto val = days_to_rows(data, split.validation_days);
  if (train.size() < 2 || val.empty()) {
    throw EvaluationError("window " + std::to_string(split.index) +
                          ": not enough rows for subset selection");
  }
  const Matrix x = data.x.select_rows(train);
  const auto y = targets_for(data, train, false);

  const auto keep = correlation_keep(x, cfg.r_max);
  std::vector<std::size_t> candidates;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    if (keep[j]) candidates.push_back(j);
  }
  const auto ranked = rfe(linear_importance(x, y), x.cols(), 1, 1, candidates);

  std::vector<std::size_t> sizes;
  for (auto k : cfg.keep_sizes) {
    if (k >= 1 && k < candidates.size()) sizes.push_back(k);
  }
  sizes.push_back(candidates.size());

  const Matrix vx = data.x.select_rows(val);
  std::vector<double> val_diff;
  for (auto r : val) val_diff.push_back(data.score_diff[r]);
  const auto labels = balance_labels(val_diff, thresholds.theta);

  SubsetSelection sel;
  sel.ranking = ranked.ranking;
  double best = -1.0;
  for (auto k : sizes) {
    FitOptions options;
    options.columns.assign(ranked.ranking.begin(),
                           ranked.ranking.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(options.columns.begin(), options.columns.end());
    const auto model = fit_baseline(ModelKind::Linear, x, y, options);
    std::vector<int> preds;
    for (std::size_t r = 0; r < vx.rows(); ++r) {
      preds.push_back(classify_balance(predict(model, vx.row(r)), thresholds.theta));
    }
    const double score = f1(preds, labels);
    sel.validation_f1.emplace_back(k, score);
    if (score > best) {
      best = score;
      sel.keep = k;
      sel.mask = FeatureMask::from_indices(data.x.cols(), options.columns, "");
    }
  }
  std::ostringstream note;
  note << "correlation_prune(r_max=" << cfg.r_max << ") + linear RFE, keep " << sel.keep
       << " (validation F1 " << format_double(best) << ")";
  sel.mask.provenance = note.str();
  return sel;
}

EvalReport evaluate(const Dataset& data, std::span<const ModelSpec> specs,
                    const EvalConfig& cfg) {
  cfg.thresholds.validate();
  if (data.size() == 0) throw EvaluationError("empty dataset");
  if (specs.empty()) throw ParameterError("no models requested");
  const auto [lo, hi] = std::minmax_element(data.day.begin(), data.day.end());
  const auto splits = rolling_splits(*lo, *hi, cfg.k_days);

  EvalReport report;
  report.theta = cfg.thresholds.theta;
  report.omega = cfg.thresholds.omega;
  report.windows = splits.size();
  const bool need_mask =
      std::any_of(specs.begin(), specs.end(), [](const auto& s) { return s.best_subset; });
  if (cfg.mask) {
    report.mask = cfg.mask;
  } else if (need_mask) {
    report.mask = select_best_subset(data, splits.front(), cfg.thresholds, cfg.subset).mask;
  }

  std::vector<ModelScore> scores(specs.size());
  std::vector<std::vector<double>> groups(specs.size());
  for (std::size_t m = 0; m < specs.size(); ++m) {
    scores[m].name = specs[m].name();
    scores[m].kind = specs[m].kind;
  }

  std::size_t balanced = 0;
  for (const auto& split : splits) {
    const auto train = days_to_rows(data, split.train_days);
    const auto val = days_to_rows(data, split.validation_days);
    const auto test = days_to_rows(data, split.test_days);
    if (train.empty() || val.empty() || test.empty()) {
      throw EvaluationError("window " + std::to_string(split.index) + " (train " +
                            join_days(split.train_days) + ", test " +
                            join_days(split.test_days) + ") has no rows in one of its sets");
    }
    for (auto r : test) {
      if (data.history_max_day[r] >= data.day[r]) {
        throw InvariantError("test row for match " + std::to_string(data.match_id[r]) +
                             " uses history from its own day or later");
      }
    }
    std::vector<double> test_diff;
    for (auto r : test) test_diff.push_back(data.score_diff[r]);
    const auto labels = balance_labels(test_diff, cfg.thresholds.theta);
    for (int l : labels) balanced += static_cast<std::size_t>(l);
    report.test_matches += test.size();

    for (std::size_t m = 0; m < specs.size(); ++m) {
      const auto& spec = specs[m];
      std::vector<int> preds;
      preds.reserve(test.size());
      if (spec.oracle) {
        preds = labels;
        scores[m].window_train_mean.push_back(0.0);
      } else {
        const auto seed =
            derive_seed(cfg.seed, spec.name() + "/window" + std::to_string(split.index));
        const auto model = fit_model(spec, data, train, val, cfg,
                                     report.mask ? &*report.mask : nullptr, seed);
        const bool probability = targets_probability(spec.kind);
        const auto ytrain = targets_for(data, probability ? without_ties(data, train) : train,
                                        probability);
        scores[m].window_train_mean.push_back(mean_of(ytrain));
        for (auto r : test) {
          preds.push_back(decide_balance(model, predict(model, data.x.row(r)), cfg.thresholds));
        }
      }
      for (std::size_t i = 0; i < preds.size(); ++i) scores[m].confusion.add(preds[i], labels[i]);
      scores[m].window_f1.push_back(f1(preds, labels));
      const auto g = grouped_f1(preds, labels, cfg.group_size);
      groups[m].insert(groups[m].end(), g.values.begin(), g.values.end());
    }
  }

  for (std::size_t m = 0; m < specs.size(); ++m) {
    scores[m].f1_mean = mean_of(groups[m]);
    scores[m].f1_sd = sd_of(groups[m]);
    scores[m].groups = groups[m].size();
  }
  report.models = std::move(scores);
  report.balanced_rate =
      static_cast<double>(balanced) / static_cast<double>(std::max<std::size_t>(1, report.test_matches));
  return report;
}

EvalReport evaluate(std::span<const MatchRecord> log, const FeatureConfig& features,
                    std::span<const ModelSpec> specs, const EvalConfig& cfg) {
  const auto data = build_dataset(log, features);
  return evaluate(data, specs, cfg);
}

EvalReport evaluate_fixed(const Dataset& data, std::span<const TrainedModel> models,
                          std::span<const std::string> names, const EvalConfig& cfg) {
  cfg.thresholds.validate();
  if (models.size() != names.size()) throw ParameterError("one name per model is required");
  if (data.size() == 0) throw EvaluationError("empty dataset");
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (models[m].schema_hash != data.schema->hash()) {
      throw SchemaError("schema hash mismatch: model '" + names[m] + "' expects " +
                        std::to_string(models[m].schema_hash) + ", features have " +
                        std::to_string(data.schema->hash()));
    }
  }
  const auto [lo, hi] = std::minmax_element(data.day.begin(), data.day.end());
  const auto splits = rolling_splits(*lo, *hi, cfg.k_days);
  EvalReport report;
  report.theta = cfg.thresholds.theta;
  report.omega = cfg.thresholds.omega;
  report.windows = splits.size();
  std::vector<std::vector<double>> groups(models.size());
  report.models.resize(models.size());
  std::size_t balanced = 0;
  for (const auto& split : splits) {
    const auto test = days_to_rows(data, split.test_days);
    if (test.empty()) {
      throw EvaluationError("window " + std::to_string(split.index) + " has no test rows");
    }
    std::vector<double> diff;
    for (auto r : test) diff.push_back(data.score_diff[r]);
    const auto labels = balance_labels(diff, cfg.thresholds.theta);
    for (int l : labels) balanced += static_cast<std::size_t>(l);
    report.test_matches += test.size();
    for (std::size_t m = 0; m < models.size(); ++m) {
      std::vector<int> preds;
      for (auto r : test) {
        preds.push_back(decide_balance(models[m], predict(models[m], data.x.row(r)), cfg.thresholds));
      }
      auto& score = report.models[m];
      for (std::size_t i = 0; i < preds.size(); ++i) score.confusion.add(preds[i], labels[i]);
      score.window_f1.push_back(f1(preds, labels));
      const auto g = grouped_f1(preds, labels, cfg.group_size);
      groups[m].insert(groups[m].end(), g.values.begin(), g.values.end());
    }
  }
  for (std::size_t m = 0; m < models.size(); ++m) {
    auto& score = report.models[m];
    score.name = names[m];
    score.kind = models[m].kind;
    score.f1_mean = mean_of(groups[m]);
    score.f1_sd = sd_of(groups[m]);
    score.groups = groups[m].size();
  }
  report.balanced_rate = static_cast<double>(balanced) /
                         static_cast<double>(std::max<std::size_t>(1, report.test_matches));
  return report;
}

TimingReport benchmark(const Dataset& data, std::span<const ModelSpec> specs,
                       std::span<const std::size_t> train_rows,
                       std::span<const std::size_t> validation_rows,
                       std::span<const std::size_t> test_rows, const EvalConfig& cfg,
                       std::size_t repetitions) {
  using clock = std::chrono::steady_clock;
  if (repetitions == 0) throw ParameterError("repetitions must be positive");
  if (test_rows.empty()) throw ParameterError("benchmark needs test rows");
  std::optional<FeatureMask> mask = cfg.mask;
  TimingReport report;
  for (const auto& spec : specs) {
    if (spec.oracle) continue;
    if (spec.best_subset && !mask) {
      throw ParameterError("best-subset benchmark needs a feature mask");
    }
    TimingRow row;
    row.name = spec.name();
    const auto t0 = clock::now();
    const auto model = fit_model(spec, data, train_rows, validation_rows, cfg,
                                 mask ? &*mask : nullptr, derive_seed(cfg.seed, row.name));
    row.train_seconds = std::chrono::duration<double>(clock::now() - t0).count();

    volatile double sink = 0.0;
    for (auto r : test_rows) sink = sink + predict(model, data.x.row(r));
    std::vector<double> per_match;
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      const auto a = clock::now();
      for (auto r : test_rows) sink = sink + predict(model, data.x.row(r));
      const double secs = std::chrono::duration<double>(clock::now() - a).count();
      per_match.push_back(secs / static_cast<double>(test_rows.size()));
    }
    row.inference_mean = mean_of(per_match);
    row.inference_sd = sd_of(per_match);
    row.repetitions = repetitions;
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_eval_csv(std::ostream& out, const EvalReport& report) {
  out << "model,f1_mean,f1_sd,groups,tp,fp,tn,fn,window_f1\n";
  for (const auto& m : report.models) {
    out << m.name << ',' << format_double(m.f1_mean) << ',' << format_double(m.f1_sd) << ','
        << m.groups << ',' << m.confusion.tp << ',' << m.confusion.fp << ',' << m.confusion.tn
        << ',' << m.confusion.fn << ',';
    for (std::size_t i = 0; i < m.window_f1.size(); ++i) {
      out << (i ? ";" : "") << format_double(m.window_f1[i]);
    }
    out << '\n';
  }
}

std::string eval_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["theta"] = report.theta;
  j["omega"] = report.omega;
  j["windows"] = report.windows;
  j["test_matches"] = report.test_matches;
  j["balanced_rate"] = report.balanced_rate;
  if (report.mask) {
    j["mask"] = {{"kept", report.mask->indices()}, {"provenance", report.mask->provenance}};
  }
  auto& models = j["models"] = nlohmann::ordered_json::array();
  for (const auto& m : report.models) {
    models.push_back({{"name", m.name},
                      {"f1_mean", m.f1_mean},
                      {"f1_sd", m.f1_sd},
                      {"groups", m.groups},
                      {"confusion",
                       {{"tp", m.confusion.tp},
                        {"fp", m.confusion.fp},
                        {"tn", m.confusion.tn},
                        {"fn", m.confusion.fn}}},
                      {"window_f1", m.window_f1},
                      {"window_train_mean", m.window_train_mean}});
  }
  return j.dump(2) + "\n";
}

EvalReport eval_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.theta = j.at("theta").get<double>();
    r.omega = j.at("omega").get<double>();
    r.windows = j.at("windows").get<std::size_t>();
    r.test_matches = j.at("test_matches").get<std::size_t>();
    r.balanced_rate = j.at("balanced_rate").get<double>();
    for (const auto& m : j.at("models")) {
      ModelScore s;
      s.name = m.at("name").get<std::string>();
      s.f1_mean = m.at("f1_mean").get<double>();
      s.f1_sd = m.at("f1_sd").get<double>();
      s.groups = m.at("groups").get<std::size_t>();
      const auto& c = m.at("confusion");
      s.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                     c.at("tn").get<std::size_t>(), c.at("fn").get<std::size_t>()};
      s.window_f1 = m.at("window_f1").get<std::vector<double>>();
      s.window_train_mean = m.value("window_train_mean", std::vector<double>{});
      r.models.push_back(std::move(s));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad evaluation report: ") + e.what());
  }
}

std::string eval_table(const EvalReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %18s %8s\n", "Model", "F1 (+/- sd)", "groups");
  out << line;
  for (const auto& m : report.models) {
    std::snprintf(line, sizeof line, "%-14s %10.2f (%.2f) %8zu\n", m.name.c_str(), m.f1_mean,
                  m.f1_sd, m.groups);
    out << line;
  }
  std::snprintf(line, sizeof line, "windows %zu, test matches %zu, balanced share %.3f\n",
                report.windows, report.test_matches, report.balanced_rate);
  out << line;
  return out.str();
}

void write_timing_csv(std::ostream& out, const TimingReport& report) {
  out << "model,train_seconds,inference_mean_seconds,inference_sd_seconds,repetitions\n";
  for (const auto& r : report.rows) {
    out << r.name << ',' << format_double(r.train_seconds) << ','
        << format_double(r.inference_mean) << ',' << format_double(r.inference_sd) << ','
        << r.repetitions << '\n';
  }
}

std::string timing_to_json(const TimingReport& report) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    j.push_back({{"name", r.name},
                 {"train_seconds", r.train_seconds},
                 {"inference_mean_seconds", r.inference_mean},
                 {"inference_sd_seconds", r.inference_sd},
                 {"repetitions", r.repetitions}});
  }
  return j.dump(2) + "\n";
}

TimingReport timing_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TimingReport r;
    for (const auto& row : j) {
      TimingRow t;
      t.name = row.at("name").get<std::string>();
      t.train_seconds = row.at("train_seconds").get<double>();
      t.inference_mean = row.at("inference_mean_seconds").get<double>();
      t.inference_sd = row.at("inference_sd_seconds").get<double>();
      t.repetitions = row.at("repetitions").get<std::size_t>();
      r.rows.push_back(std::move(t));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad timing report: ") + e.what());
  }
}

std::string timing_table(const TimingReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %14s %24s\n", "Model", "Training (s)",
                "Inference (s, +/- sd)");
  out << line;
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof line, "%-14s %14.2e %14.1e (%.1e)\n", r.name.c_str(),
                  r.train_seconds, r.inference_mean, r.inference_sd);
    out << line;
  }
  return out.str();
}

}  // namespace cbal
