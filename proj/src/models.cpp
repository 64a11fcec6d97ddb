#include "cbal/models.hpp"

#include <algorithm>
#include <cmath>

#include "model_common.hpp"

namespace cbal {

namespace {

struct KindName {
  ModelKind kind;
  std::string_view name;
};

constexpr KindName kKindNames[] = {
    {ModelKind::Dummy, "dummy"},          {ModelKind::AvgSkill, "avgskill"},
    {ModelKind::Linear, "linear"},        {ModelKind::RandomForest, "forest"},
    {ModelKind::MlpRegressor, "mlp"},     {ModelKind::Logistic, "logistic"},
    {ModelKind::MlpSoftmax, "mlp_softmax"},
};

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::fabs(t))); }

TrainedModel fit_logistic(const Matrix& x, std::span<const double> y, const FitOptions& options) {
  std::size_t positives = 0;
  for (double v : y) {
    if (v != 0.0 && v != 1.0) throw FitError("logistic labels must be 0 or 1");
    positives += v == 1.0 ? 1 : 0;
  }
  if (positives == 0 || positives == y.size()) {
    throw FitError("logistic regression needs both classes in the training labels");
  }
  auto inputs = detail::prepare_inputs(x, options);
  const Matrix& z = inputs.z;
  const std::size_t n = z.rows();
  const std::size_t d = z.cols() + 1;
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<double> w(d, 0.0);
  const auto loss_at = [&](const std::vector<double>& ww) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double t = ww[0] + dot(z.row(r), std::span(ww).subspan(1));
      total += softplus(t) - y[r] * t;
    }
    return total * inv_n;
  };

  constexpr double kTolerance = 1e-6;
  constexpr std::size_t kMaxIter = 100;
  double loss = loss_at(w);
  double grad_norm = 0.0;
  std::size_t iter = 0;
  std::vector<double> aug(d);
  for (; iter < kMaxIter; ++iter) {
    std::vector<double> grad(d, 0.0);
    Matrix hess(d, d);
    for (std::size_t r = 0; r < n; ++r) {
      aug[0] = 1.0;
      auto row = z.row(r);
      std::copy(row.begin(), row.end(), aug.begin() + 1);
      const double p = detail::sigmoid(dot(aug, w));
      const double resid = p - y[r];
      const double weight = p * (1.0 - p);
      for (std::size_t i = 0; i < d; ++i) {
        grad[i] += resid * aug[i];
        const double wi = weight * aug[i];
        double* hi = &hess(i, 0);
        for (std::size_t j = 0; j <= i; ++j) hi[j] += wi * aug[j];
      }
    }
    for (std::size_t i = 0; i < d; ++i) {
      grad[i] *= inv_n;
      for (std::size_t j = 0; j <= i; ++j) {
        hess(i, j) *= inv_n;
        hess(j, i) = hess(i, j);
      }
      hess(i, i) += 1e-8;
    }
    grad_norm = std::sqrt(dot(grad, grad));
    if (grad_norm < kTolerance) break;

    std::vector<double> step;
    Matrix factor = hess;
    if (cholesky_decompose(factor)) {
      step = cholesky_solve(factor, grad);
    } else {
      step = conjugate_gradient(hess, grad);
    }
    // Backtracking keeps each Newton step a descent step.
    const double slope = dot(grad, step);
    double t = 1.0;
    std::vector<double> trial(d);
    double trial_loss = loss;
    for (int halvings = 0; halvings < 50; ++halvings) {
      for (std::size_t i = 0; i < d; ++i) trial[i] = w[i] - t * step[i];
      trial_loss = loss_at(trial);
      if (trial_loss <= loss - 1e-4 * t * slope) break;
      t *= 0.5;
    }
    if (!std::isfinite(trial_loss)) throw FitError("logistic regression diverged");
    if (trial_loss > loss) break;
    w = trial;
    loss = trial_loss;
  }

  LinearParams params;
  params.bias = w[0];
  params.coef.assign(w.begin() + 1, w.end());
  auto model = detail::make_model(ModelKind::Logistic, std::move(params), std::move(inputs),
                                  x.cols(), options);
  model.metadata["newton_iterations"] = std::to_string(iter);
  model.metadata["gradient_norm"] = format_double(grad_norm);
  model.metadata["converged"] = grad_norm < kTolerance ? "true" : "false";
  return model;
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const auto& kn : kKindNames) {
    if (kn.name == lower) return kn.kind;
  }
  if (lower == "rndfrst" || lower == "randomforest") return ModelKind::RandomForest;
  if (lower == "nn" || lower == "mlpregressor") return ModelKind::MlpRegressor;
  if (lower == "nnsoftmax" || lower == "mlpsoftmax") return ModelKind::MlpSoftmax;
  throw ParameterError("unknown model kind '" + std::string(name) + "'");
}

bool targets_probability(ModelKind kind) {
  return kind == ModelKind::Logistic || kind == ModelKind::MlpSoftmax;
}

std::vector<double> solve_least_squares(const Matrix& x, std::span<const double> y,
                                        double ridge) {
  Matrix gram = gram_with_intercept(x);
  auto rhs = cross_with_intercept(x, y);
  for (std::size_t i = 1; i < gram.rows(); ++i) gram(i, i) += ridge;
  Matrix factor = gram;
  if (cholesky_decompose(factor)) return cholesky_solve(factor, rhs);
  return conjugate_gradient(gram, rhs, 1e-14);
}

TrainedModel fit_baseline(ModelKind kind, const Matrix& x, std::span<const double> y,
                          const FitOptions& options) {
  detail::check_training_data(x, y);
  switch (kind) {
    case ModelKind::Dummy: {
      double sum = 0.0;
      for (double v : y) sum += v;
      ConstantParams params{sum / static_cast<double>(y.size())};
      FitOptions opts = options;
      opts.standardize = false;
      auto inputs = detail::prepare_inputs(Matrix(0, x.cols()), opts);
      inputs.columns.clear();
      return detail::make_model(kind, params, std::move(inputs), x.cols(), options);
    }
    case ModelKind::AvgSkill:
    case ModelKind::Linear: {
      if (kind == ModelKind::AvgSkill && options.columns.size() != 2) {
        throw ParameterError("AvgSkill uses exactly the two team-average skill columns");
      }
      auto inputs = detail::prepare_inputs(x, options);
      auto beta = solve_least_squares(inputs.z, y);
      LinearParams params;
      params.bias = beta[0];
      params.coef.assign(beta.begin() + 1, beta.end());
      for (double c : params.coef) {
        if (!std::isfinite(c)) throw FitError("least squares produced non-finite coefficients");
      }
      return detail::make_model(kind, std::move(params), std::move(inputs), x.cols(), options);
    }
    case ModelKind::Logistic:
      return fit_logistic(x, y, options);
    default:
      throw ParameterError("fit_baseline does not handle kind " + std::string(to_string(kind)));
  }
}

double predict(const TrainedModel& model, std::span<const double> raw_row) {
  if (raw_row.size() != model.input_dim) {
    throw SchemaError("input width " + std::to_string(raw_row.size()) +
                      " does not match model width " + std::to_string(model.input_dim));
  }
  return std::visit(
      [&](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ConstantParams>) {
          return p.value;
        } else if constexpr (std::is_same_v<P, LinearParams>) {
          double s = p.bias;
          for (std::size_t j = 0; j < model.columns.size(); ++j) {
            const std::size_t c = model.columns[j];
            s += p.coef[j] * model.normalizer.apply_one(c, raw_row[c]);
          }
          return model.kind == ModelKind::Logistic ? detail::sigmoid(s) : s;
        } else {
          std::vector<double> z(model.columns.size());
          for (std::size_t j = 0; j < z.size(); ++j) {
            const std::size_t c = model.columns[j];
            z[j] = model.normalizer.apply_one(c, raw_row[c]);
          }
          if constexpr (std::is_same_v<P, ForestParams>) {
            double s = 0.0;
            for (const auto& tree : p.trees) s += tree.predict(z);
            return s / static_cast<double>(p.trees.size());
          } else {
            auto out = mlp_output(p, z);
            if (p.head == MlpHead::Softmax) return out[1];
            return p.target_offset + p.target_scale * out[0];
          }
        }
      },
      model.params);
}

double predict(const TrainedModel& model, const MatchFeatureVector& features) {
  if (features.schema && model.schema_hash != 0 &&
      features.schema->hash() != model.schema_hash) {
    throw SchemaError("model was trained on a different feature schema");
  }
  return predict(model, std::span<const double>(features.values));
}

std::vector<double> predict_rows(const TrainedModel& model, const Matrix& rows) {
  std::vector<double> out(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) out[r] = predict(model, rows.row(r));
  return out;
}

std::vector<double> feature_importances(const TrainedModel& model) {
  if (const auto* lin = std::get_if<LinearParams>(&model.params)) {
    std::vector<double> out;
    for (double c : lin->coef) out.push_back(std::fabs(c));
    return out;
  }
  if (const auto* forest = std::get_if<ForestParams>(&model.params)) return forest->importances;
  throw ParameterError("importances are defined for linear and forest models only");
}

void BalanceThresholds::validate() const {
  if (!(theta > 0.0)) throw ParameterError("theta must be positive");
  if (!(omega > 0.0 && omega <= 0.5)) throw ParameterError("omega must lie in (0, 0.5]");
}

int classify_balance(double r, double theta) { return std::fabs(r) < theta ? 1 : 0; }

int classify_balance_from_prob(double p, double omega) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("probability outside [0, 1]");
  // Compare against the band edges so that p = 0.5 +/- omega is inside exactly.
  return p >= 0.5 - omega && p <= 0.5 + omega ? 1 : 0;
}

}  // namespace cbal
