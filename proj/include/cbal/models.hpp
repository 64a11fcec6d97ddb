#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cbal/features.hpp"
#include "cbal/linalg.hpp"
#include "cbal/rng.hpp"

namespace cbal {

/// Regressors target the signed score difference; Logistic and MlpSoftmax
/// target P(team 1 wins).
enum class ModelKind : std::uint32_t {
  Dummy = 0,
  AvgSkill = 1,
  Linear = 2,
  RandomForest = 3,
  MlpRegressor = 4,
  Logistic = 5,
  MlpSoftmax = 6,
};

std::string_view to_string(ModelKind kind);
/// Accepts the canonical names plus a few aliases ("nn", "rndfrst", ...).
ModelKind parse_model_kind(std::string_view name);
bool targets_probability(ModelKind kind);

struct ConstantParams {
  double value = 0.0;
};

struct LinearParams {
  std::vector<double> coef;
  double bias = 0.0;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // go left when x[feature] <= threshold
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const;
};

struct ForestParams {
  std::vector<RegressionTree> trees;
  /// Mean impurity decrease per input column, normalized per tree.
  std::vector<double> importances;
};

enum class MlpHead : std::uint8_t { Regression = 0, Softmax = 1 };

/// Fully connected layer; weights are outputs x inputs, row-major.
struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weights;
  std::vector<double> bias;
};

struct MlpParams {
  MlpHead head = MlpHead::Regression;
  std::vector<DenseLayer> layers;
  /// Regression output is target_offset + target_scale * network output.
  double target_offset = 0.0;
  double target_scale = 1.0;
};

using ModelParams = std::variant<ConstantParams, LinearParams, ForestParams, MlpParams>;

/// A fitted predictor with its normalizer and input column subset.
/// Immutable after fitting; safe for concurrent prediction.
struct TrainedModel {
  ModelKind kind = ModelKind::Dummy;
  ModelParams params;
  /// Fitted over the full input width; only `columns` are consulted.
  Normalizer normalizer;
  std::vector<std::size_t> columns;
  std::uint64_t schema_hash = 0;
  std::size_t input_dim = 0;
  std::map<std::string, std::string> metadata;
};

struct FitOptions {
  /// Input columns to use; empty selects all.
  std::vector<std::size_t> columns;
  bool standardize = true;
  std::uint64_t schema_hash = 0;
};

/// Dummy, AvgSkill, Linear or Logistic. AvgSkill requires exactly two columns;
/// Logistic requires labels in {0, 1} with both classes present.
TrainedModel fit_baseline(ModelKind kind, const Matrix& x, std::span<const double> y,
                          const FitOptions& options = {});

/// Least squares with intercept via jittered normal equations. Returns
/// {bias, coef...}. Falls back to conjugate gradient if the Gram matrix is
/// numerically singular.
std::vector<double> solve_least_squares(const Matrix& x, std::span<const double> y,
                                        double ridge = 1e-8);

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 8;
  std::size_t min_leaf = 5;
  /// 0 selects floor(sqrt(d)).
  std::size_t features_per_split = 0;
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

TrainedModel fit_forest(const Matrix& x, std::span<const double> y, const ForestConfig& cfg,
                        const FitOptions& options = {});

/// One CART regression tree on the given rows (variance-reduction splits).
/// Adds impurity decreases to `importances` (length x.cols()).
RegressionTree fit_regression_tree(const Matrix& x, std::span<const double> y,
                                   std::vector<std::size_t> rows, const ForestConfig& cfg,
                                   Rng& rng, std::vector<double>& importances);

struct MlpConfig {
  std::vector<std::size_t> hidden{64, 32};
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 200;
  std::size_t patience = 5;
  /// Held-out share of the training rows when no validation set is given.
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// Raw validation rows (same width as the training matrix).
struct ValidationSet {
  const Matrix* x = nullptr;
  std::span<const double> y;
};

/// Mini-batch training with Adam updates and early stopping on validation loss.
/// Regression minimizes squared error; Softmax minimizes cross-entropy on {0,1}.
TrainedModel fit_mlp(const Matrix& x, std::span<const double> y, const MlpConfig& cfg,
                     MlpHead head, const FitOptions& options = {},
                     std::optional<ValidationSet> validation = std::nullopt);

/// Uniform fan-in scaled initialization.
MlpParams init_mlp(std::size_t inputs, std::span<const std::size_t> hidden, MlpHead head,
                   Rng& rng);
/// Network output: {r} for regression (before target rescaling), {p0, p1} for softmax.
std::vector<double> mlp_output(const MlpParams& params, std::span<const double> x);
/// Mean loss over the rows; fills `gradient` (same shape as params) when non-null.
/// Regression targets are compared to the raw network output.
double mlp_loss(const MlpParams& params, const Matrix& x, std::span<const double> y,
                MlpParams* gradient = nullptr);

/// Regressors: predicted signed score difference. Classifiers: P(team 1 wins).
double predict(const TrainedModel& model, std::span<const double> raw_row);
/// Checks the schema hash before predicting.
double predict(const TrainedModel& model, const MatchFeatureVector& features);
std::vector<double> predict_rows(const TrainedModel& model, const Matrix& rows);

/// Per-column importance: |coefficient| for linear kinds, impurity decrease for forests.
std::vector<double> feature_importances(const TrainedModel& model);

struct BalanceThresholds {
  double theta = 3.0;
  double omega = 0.3;

  void validate() const;
};

/// 1 (balanced) iff |r| < theta. Boundary is unbalanced.
int classify_balance(double r, double theta);
/// 1 iff |p - 1/2| <= omega. Throws DomainError when p lies outside [0, 1].
int classify_balance_from_prob(double p, double omega);

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> serialize(const TrainedModel& model);
/// Throws FormatError on bad magic, version mismatch, truncation or checksum failure.
TrainedModel deserialize(std::span<const std::uint8_t> bytes);
void save_model(const std::string& path, const TrainedModel& model);
TrainedModel load_model(const std::string& path);

}  // namespace cbal
