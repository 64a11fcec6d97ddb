#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <string>

#include "cbal/error.hpp"
#include "cbal/models.hpp"

namespace cbal::detail {

struct PreparedInputs {
  Normalizer normalizer;
  std::vector<std::size_t> columns;
  Matrix z;
};

inline void check_training_data(const Matrix& x, std::span<const double> y) {
  if (x.rows() == 0) throw FitError("empty training set");
  if (x.rows() != y.size()) throw FitError("feature rows and targets differ in count");
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw FitError("non-finite feature value");
  }
  for (double v : y) {
    if (!std::isfinite(v)) throw FitError("non-finite target value");
  }
}

inline PreparedInputs prepare_inputs(const Matrix& x, const FitOptions& options) {
  PreparedInputs p;
  if (options.columns.empty()) {
    p.columns.resize(x.cols());
    std::iota(p.columns.begin(), p.columns.end(), std::size_t{0});
  } else {
    p.columns = options.columns;
    for (auto c : p.columns) {
      if (c >= x.cols()) throw FitError("column index out of range");
    }
  }
  p.normalizer = options.standardize && x.rows() >= 2 ? Normalizer::fit(x)
                                                      : Normalizer::identity(x.cols());
  p.z = Matrix(x.rows(), p.columns.size());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto src = x.row(r);
    auto dst = p.z.row(r);
    for (std::size_t j = 0; j < p.columns.size(); ++j) {
      dst[j] = p.normalizer.apply_one(p.columns[j], src[p.columns[j]]);
    }
  }
  return p;
}

inline Matrix transform_rows(const TrainedModel& model, const Matrix& x) {
  Matrix z(x.rows(), model.columns.size());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto src = x.row(r);
    auto dst = z.row(r);
    for (std::size_t j = 0; j < model.columns.size(); ++j) {
      dst[j] = model.normalizer.apply_one(model.columns[j], src[model.columns[j]]);
    }
  }
  return z;
}

inline TrainedModel make_model(ModelKind kind, ModelParams params, PreparedInputs&& inputs,
                               std::size_t input_dim, const FitOptions& options) {
  TrainedModel m;
  m.kind = kind;
  m.params = std::move(params);
  m.normalizer = std::move(inputs.normalizer);
  m.columns = std::move(inputs.columns);
  m.schema_hash = options.schema_hash;
  m.input_dim = input_dim;
  m.metadata["standardize"] = options.standardize ? "true" : "false";
  return m;
}

inline double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace cbal::detail
