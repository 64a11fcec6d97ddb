#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cbal/features.hpp"
#include "cbal/linalg.hpp"
#include "cbal/models.hpp"

namespace cbal {

/// Greedy scan in column order: a column whose |Pearson r| with an earlier
/// kept column exceeds r_max is dropped. Constant columns count as r = 0.
std::vector<bool> correlation_keep(const Matrix& x, double r_max = 0.95);
FeatureMask correlation_prune(const Matrix& x, const FeatureSchema& schema, double r_max = 0.95);

/// Drops columns that are (numerically) linear combinations of earlier kept
/// columns plus an intercept. Used before OLS so exact identities such as
/// "role counts sum to match count" do not make the design singular.
std::vector<bool> dependency_keep(const Matrix& x, double tol = 1e-9);

/// Importance per active column, in the order of `active`.
using ImportanceFn = std::function<std::vector<double>(std::span<const std::size_t> active)>;

struct RfeResult {
  /// Every candidate column, best first: survivors by final importance, then
  /// eliminated columns in reverse elimination order.
  std::vector<std::size_t> ranking;
  std::vector<std::size_t> eliminated;
  std::vector<std::size_t> kept;
};

/// Recursive feature elimination over `candidates` (all of [0, dim) when empty).
/// Ties in importance drop the later column index first.
RfeResult rfe(const ImportanceFn& importance, std::size_t dim, std::size_t keep_k,
              std::size_t step = 1, std::span<const std::size_t> candidates = {});

/// |coefficient| of a least-squares fit on z-scored columns. The Gram matrix is
/// built once; each call solves on the active sub-block.
ImportanceFn linear_importance(const Matrix& x, std::span<const double> y);
/// Mean impurity decrease of a forest refit on the active columns.
ImportanceFn forest_importance(const Matrix& x, std::span<const double> y, ForestConfig cfg);

struct SignificanceRow {
  std::string feature;
  double coefficient = 0.0;
  double std_error = 0.0;
  double t_stat = 0.0;
  double p_value = 1.0;
};

/// OLS with intercept. Standard errors from sigma^2 (X'X)^-1, two-sided p-values
/// with n - d - 1 degrees of freedom. Rows sorted by |coefficient| descending.
/// Throws RankDeficiencyError when X is not of full column rank.
std::vector<SignificanceRow> ols_significance(const Matrix& x, std::span<const double> y,
                                              std::span<const std::string> names);

/// Label-symmetric summary of match features: per player feature the mean over
/// both teams ("avg_<f>") and the absolute team difference ("avg_<f>_abs_diff"),
/// plus symmetric skill and headcount summaries.
struct SymmetricView {
  Matrix x;
  std::vector<std::string> names;
};

SymmetricView symmetric_view(const Matrix& match_rows, const FeatureSchema& schema);

struct SignificanceReport {
  std::vector<SignificanceRow> rows;
  std::vector<std::string> pruned_correlated;
  std::vector<std::string> pruned_dependent;
  std::vector<std::string> rfe_top;
  std::size_t samples = 0;
};

/// Symmetric view, z-scoring, correlation and dependency pruning, then OLS on
/// |score_diff| and a linear RFE down to `rfe_keep` columns.
SignificanceReport significance_analysis(const Dataset& data, std::span<const std::size_t> rows,
                                         double r_max = 0.95, std::size_t rfe_keep = 10);

/// Plain-language gloss of a feature name for report tables.
std::string describe_feature(const std::string& name);

void write_significance_csv(std::ostream& out, const SignificanceReport& report);
std::string significance_table(const SignificanceReport& report, std::size_t max_rows = 20);

}  // namespace cbal
