#include <algorithm>
#include <cmath>
#include <numeric>

#include "cbal/models.hpp"
#include "model_common.hpp"

namespace cbal {

namespace {

struct SplitCandidate {
  double gain = 0.0;
  std::int32_t feature = -1;
  double threshold = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, std::span<const double> y, const ForestConfig& cfg, Rng& rng,
              std::vector<double>& importances)
      : x_(x), y_(y), cfg_(cfg), rng_(rng), importances_(importances) {
    features_.resize(x.cols());
    std::iota(features_.begin(), features_.end(), std::size_t{0});
    per_split_ = cfg.features_per_split == 0
                     ? std::max<std::size_t>(
                           1, static_cast<std::size_t>(std::sqrt(static_cast<double>(x.cols()))))
                     : std::min(cfg.features_per_split, x.cols());
  }

  RegressionTree build(std::vector<std::size_t> rows) {
    rows_ = std::move(rows);
    grow(0, rows_.size(), 0);
    return std::move(tree_);
  }

 private:
  std::int32_t grow(std::size_t begin, std::size_t end, std::size_t depth) {
    const std::size_t n = end - begin;
    double sum = 0.0;
    double sumsq = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      sum += y_[rows_[i]];
      sumsq += y_[rows_[i]] * y_[rows_[i]];
    }
    const auto index = static_cast<std::int32_t>(tree_.nodes.size());
    tree_.nodes.push_back({});
    tree_.nodes[index].value = sum / static_cast<double>(n);

    const double sse = sumsq - sum * sum / static_cast<double>(n);
    if (depth >= cfg_.max_depth || n < 2 * std::max<std::size_t>(cfg_.min_leaf, 1) ||
        sse <= 1e-12 * std::max(1.0, sumsq)) {
      return index;
    }

    SplitCandidate best = find_split(begin, end, sum);
    if (best.feature < 0) return index;

    auto mid = std::partition(rows_.begin() + static_cast<std::ptrdiff_t>(begin),
                              rows_.begin() + static_cast<std::ptrdiff_t>(end),
                              [&](std::size_t r) { return x_(r, best.feature) <= best.threshold; });
    const auto split = static_cast<std::size_t>(mid - rows_.begin());
    importances_[best.feature] += best.gain;

    const std::int32_t left = grow(begin, split, depth + 1);
    const std::int32_t right = grow(split, end, depth + 1);
    auto& node = tree_.nodes[index];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = left;
    node.right = right;
    return index;
  }

  SplitCandidate find_split(std::size_t begin, std::size_t end, double total) {
    const std::size_t n = end - begin;
    const std::size_t min_leaf = std::max<std::size_t>(cfg_.min_leaf, 1);
    // Partial Fisher-Yates picks the candidate features for this node.
    for (std::size_t k = 0; k < per_split_; ++k) {
      const std::size_t j = k + rng_.uniform_index(features_.size() - k);
      std::swap(features_[k], features_[j]);
    }
    std::vector<std::size_t> candidates(features_.begin(),
                                        features_.begin() + static_cast<std::ptrdiff_t>(per_split_));
    std::sort(candidates.begin(), candidates.end());

    SplitCandidate best;
    const double parent = total * total / static_cast<double>(n);
    pairs_.resize(n);
    for (std::size_t f : candidates) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = rows_[begin + i];
        pairs_[i] = {x_(r, f), y_[r]};
      }
      std::sort(pairs_.begin(), pairs_.end());
      double left_sum = 0.0;
      for (std::size_t i = 1; i < n; ++i) {
        left_sum += pairs_[i - 1].second;
        if (i < min_leaf || n - i < min_leaf) continue;
        if (!(pairs_[i - 1].first < pairs_[i].first)) continue;
        const double nl = static_cast<double>(i);
        const double nr = static_cast<double>(n - i);
        const double right_sum = total - left_sum;
        const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr - parent;
        if (gain > best.gain + 1e-12) {
          best.gain = gain;
          best.feature = static_cast<std::int32_t>(f);
          double t = 0.5 * (pairs_[i - 1].first + pairs_[i].first);
          if (!(t < pairs_[i].first)) t = pairs_[i - 1].first;
          best.threshold = t;
        }
      }
    }
    return best;
  }

  const Matrix& x_;
  std::span<const double> y_;
  const ForestConfig& cfg_;
  Rng& rng_;
  std::vector<double>& importances_;
  std::vector<std::size_t> features_;
  std::size_t per_split_ = 1;
  std::vector<std::size_t> rows_;
  std::vector<std::pair<double, double>> pairs_;
  RegressionTree tree_;
};

}  // namespace

double RegressionTree::predict(std::span<const double> x) const {
  std::int32_t i = 0;
  while (nodes[i].feature >= 0) {
    const auto& node = nodes[i];
    i = x[node.feature] <= node.threshold ? node.left : node.right;
  }
  return nodes[i].value;
}

RegressionTree fit_regression_tree(const Matrix& x, std::span<const double> y,
                                   std::vector<std::size_t> rows, const ForestConfig& cfg,
                                   Rng& rng, std::vector<double>& importances) {
  if (rows.empty()) throw FitError("cannot grow a tree on zero rows");
  if (importances.size() != x.cols()) importances.assign(x.cols(), 0.0);
  TreeBuilder builder(x, y, cfg, rng, importances);
  return builder.build(std::move(rows));
}

TrainedModel fit_forest(const Matrix& x, std::span<const double> y, const ForestConfig& cfg,
                        const FitOptions& options) {
  detail::check_training_data(x, y);
  if (cfg.n_trees == 0) throw ParameterError("forest needs at least one tree");
  if (x.rows() < cfg.min_leaf) throw FitError("fewer rows than min_leaf");
  auto inputs = detail::prepare_inputs(x, options);
  const Matrix& z = inputs.z;
  const std::size_t n = z.rows();

  ForestParams params;
  params.importances.assign(z.cols(), 0.0);
  std::vector<double> tree_importance;
  for (std::size_t t = 0; t < cfg.n_trees; ++t) {
    Rng rng(splitmix64(derive_seed(cfg.seed, "forest") + t));
    std::vector<std::size_t> rows(n);
    if (cfg.bootstrap) {
      for (auto& r : rows) r = rng.uniform_index(n);
    } else {
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    tree_importance.assign(z.cols(), 0.0);
    params.trees.push_back(fit_regression_tree(z, y, std::move(rows), cfg, rng, tree_importance));
    const double total = std::accumulate(tree_importance.begin(), tree_importance.end(), 0.0);
    if (total > 0.0) {
      for (std::size_t j = 0; j < z.cols(); ++j) params.importances[j] += tree_importance[j] / total;
    }
  }
  for (auto& v : params.importances) v /= static_cast<double>(cfg.n_trees);

  auto model = detail::make_model(ModelKind::RandomForest, std::move(params), std::move(inputs),
                                  x.cols(), options);
  model.metadata["n_trees"] = std::to_string(cfg.n_trees);
  model.metadata["max_depth"] = std::to_string(cfg.max_depth);
  model.metadata["min_leaf"] = std::to_string(cfg.min_leaf);
  model.metadata["bootstrap"] = cfg.bootstrap ? "true" : "false";
  model.metadata["seed"] = std::to_string(cfg.seed);
  return model;
}

}  // namespace cbal
