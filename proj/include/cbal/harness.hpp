#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbal/features.hpp"
#include "cbal/models.hpp"

namespace cbal {

/// One rolling window over day indices.
struct WindowSplit {
  std::size_t index = 0;
  std::vector<std::int64_t> train_days;
  std::vector<std::int64_t> validation_days;
  std::vector<std::int64_t> test_days;
};

/// Split w uses days [first_day, first_day + K - 1 + w]: all but the last three
/// for training, the next two for validation, the last for testing.
/// Throws ParameterError when K < 4 or the span is shorter than K.
std::vector<WindowSplit> rolling_splits(std::int64_t first_day, std::int64_t last_day,
                                        std::size_t k);

/// Positive class is 1 (balanced). Zero when precision + recall is zero.
double f1(std::span<const int> preds, std::span<const int> labels);

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  void add(int pred, int label);
};

/// A model to evaluate. `best_subset` refits the kind on the selected mask.
struct ModelSpec {
  ModelKind kind = ModelKind::Linear;
  bool best_subset = false;
  /// Scores the true outcome instead of fitting; an upper bound for F1.
  bool oracle = false;

  std::string name() const;
  static ModelSpec parse(std::string_view text);
};

/// Candidate subset sizes are searched on the validation days of the first window.
struct SubsetConfig {
  double r_max = 0.95;
  std::vector<std::size_t> keep_sizes{8, 16, 24, 32, 48, 64};
};

struct EvalConfig {
  BalanceThresholds thresholds;
  std::size_t k_days = 86;
  std::size_t group_size = 20;
  ForestConfig forest;
  MlpConfig mlp;
  SubsetConfig subset;
  /// Mask used by best-subset models; selected on the first window when empty.
  std::optional<FeatureMask> mask;
  std::uint64_t seed = 1;
};

struct ModelScore {
  std::string name;
  ModelKind kind = ModelKind::Dummy;
  double f1_mean = 0.0;
  double f1_sd = 0.0;
  std::size_t groups = 0;
  Confusion confusion;
  std::vector<double> window_f1;
  /// Mean training target per window (regressors: signed score difference).
  std::vector<double> window_train_mean;
};

struct EvalReport {
  std::vector<ModelScore> models;
  std::size_t windows = 0;
  std::size_t test_matches = 0;
  /// Share of test matches whose true outcome is balanced.
  double balanced_rate = 0.0;
  std::optional<FeatureMask> mask;
  double theta = 3.0;
  double omega = 0.3;
};

/// Ground truth label: |score_diff| < theta.
std::vector<int> balance_labels(std::span<const double> score_diff, double theta);

/// Group-of-n F1: mean and standard deviation over consecutive full groups.
struct GroupF1 {
  double mean = 0.0;
  double sd = 0.0;
  std::vector<double> values;
};
GroupF1 grouped_f1(std::span<const int> preds, std::span<const int> labels, std::size_t group);

/// Selects a best-subset mask: correlation pruning and linear RFE on the training
/// days of `split`, subset size chosen by Linear F1 on its validation days.
struct SubsetSelection {
  FeatureMask mask;
  std::size_t keep = 0;
  std::vector<std::pair<std::size_t, double>> validation_f1;
  std::vector<std::size_t> ranking;
};
SubsetSelection select_best_subset(const Dataset& data, const WindowSplit& split,
                                   const BalanceThresholds& thresholds, const SubsetConfig& cfg);

/// Fits one model on the given training and validation rows.
TrainedModel fit_model(const ModelSpec& spec, const Dataset& data,
                       std::span<const std::size_t> train_rows,
                       std::span<const std::size_t> validation_rows, const EvalConfig& cfg,
                       const FeatureMask* mask, std::uint64_t seed);

/// Balance decision for a model output (threshold rule for regressors, band rule
/// for classifiers).
int decide_balance(const TrainedModel& model, double output, const BalanceThresholds& t);

/// Rolling-window evaluation over a prebuilt dataset. Throws EvaluationError
/// naming the window when a window lacks data.
EvalReport evaluate(const Dataset& data, std::span<const ModelSpec> specs, const EvalConfig& cfg);
EvalReport evaluate(std::span<const MatchRecord> log, const FeatureConfig& features,
                    std::span<const ModelSpec> specs, const EvalConfig& cfg);

/// Scores already-fitted models on the test day of every rolling window.
/// Throws SchemaError when a model's schema hash differs from the dataset's.
EvalReport evaluate_fixed(const Dataset& data, std::span<const TrainedModel> models,
                          std::span<const std::string> names, const EvalConfig& cfg);

struct TimingRow {
  std::string name;
  double train_seconds = 0.0;
  double inference_mean = 0.0;
  double inference_sd = 0.0;
  std::size_t repetitions = 0;
};

struct TimingReport {
  std::vector<TimingRow> rows;
};

/// Times training on `train_rows` and single-match inference on `test_rows`
/// (one warm-up pass, then `repetitions` timed passes; per-match mean and sd).
TimingReport benchmark(const Dataset& data, std::span<const ModelSpec> specs,
                       std::span<const std::size_t> train_rows,
                       std::span<const std::size_t> validation_rows,
                       std::span<const std::size_t> test_rows, const EvalConfig& cfg,
                       std::size_t repetitions = 20);

void write_eval_csv(std::ostream& out, const EvalReport& report);
std::string eval_to_json(const EvalReport& report);
EvalReport eval_from_json(std::string_view text);
std::string eval_table(const EvalReport& report);
void write_timing_csv(std::ostream& out, const TimingReport& report);
std::string timing_to_json(const TimingReport& report);
TimingReport timing_from_json(std::string_view text);
std::string timing_table(const TimingReport& report);

}  // namespace cbal
