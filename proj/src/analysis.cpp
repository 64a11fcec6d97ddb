#include "cbal/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "cbal/error.hpp"

namespace cbal {

namespace {

struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> norm;  // sqrt of centered sum of squares
};

ColumnStats column_stats(const Matrix& x) {
  const std::size_t d = x.cols();
  ColumnStats s;
  s.mean.assign(d, 0.0);
  s.norm.assign(d, 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += row[j];
  }
  for (auto& m : s.mean) m /= static_cast<double>(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - s.mean[j];
      s.norm[j] += c * c;
    }
  }
  for (auto& v : s.norm) v = std::sqrt(v);
  return s;
}

bool is_constant(const ColumnStats& s, std::size_t j) {
  return s.norm[j] <= 1e-12 * std::max(1.0, std::fabs(s.mean[j]));
}

std::vector<std::string> names_where(std::span<const std::string> names,
                                     const std::vector<bool>& keep, bool value) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    if (keep[j] == value) out.push_back(names[j]);
  }
  return out;
}

std::string gloss_player_feature(const std::string& f) {
  const auto suffix = [&](std::string_view prefix) {
    return f.substr(prefix.size());
  };
  if (f == "num_matches") return "number of matches played";
  if (f == "num_wins") return "number of matches won";
  if (f == "freq_wins") return "win rate";
  if (f == "num_dropout") return "number of dropouts";
  if (f == "freq_dropout") return "dropout rate";
  if (f.rfind("num_role_", 0) == 0) return "matches played as " + suffix("num_role_");
  if (f.rfind("freq_role_", 0) == 0) return "share of matches played as " + suffix("freq_role_");
  if (f.rfind("avg_num_action_", 0) == 0) return suffix("avg_num_action_") + " count per match";
  if (f.rfind("num_action_", 0) == 0) return "total " + suffix("num_action_") + " count";
  if (f == "skill") return "skill rating";
  return f;
}

bool ends_with(const std::string& s, std::string_view tail) {
  return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

}  // namespace

std::vector<bool> correlation_keep(const Matrix& x, double r_max) {
  if (x.rows() < 2) throw ParameterError("correlation pruning needs at least two rows");
  const std::size_t d = x.cols();
  const auto stats = column_stats(x);
  std::vector<bool> keep(d, true);
  std::vector<std::size_t> kept;
  std::vector<double> cj(x.rows());
  for (std::size_t j = 0; j < d; ++j) {
    if (is_constant(stats, j)) continue;
    for (std::size_t r = 0; r < x.rows(); ++r) cj[r] = x(r, j) - stats.mean[j];
    for (std::size_t k : kept) {
      double s = 0.0;
      for (std::size_t r = 0; r < x.rows(); ++r) s += cj[r] * (x(r, k) - stats.mean[k]);
      const double corr = s / (stats.norm[j] * stats.norm[k]);
      if (std::fabs(corr) > r_max) {
        keep[j] = false;
        break;
      }
    }
    if (keep[j]) kept.push_back(j);
  }
  return keep;
}

FeatureMask correlation_prune(const Matrix& x, const FeatureSchema& schema, double r_max) {
  if (x.cols() != schema.size()) throw SchemaError("matrix width does not match schema");
  auto keep = correlation_keep(x, r_max);
  FeatureMask mask;
  mask.keep = std::move(keep);
  std::ostringstream note;
  note << "correlation_prune(r_max=" << r_max << ")";
  mask.provenance = note.str();
  return mask;
}

std::vector<bool> dependency_keep(const Matrix& x, double tol) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  const auto stats = column_stats(x);
  std::vector<bool> keep(d, false);
  // Modified Gram-Schmidt on centered columns; centering stands in for the intercept.
  std::vector<std::vector<double>> basis;
  std::vector<double> v(n);
  for (std::size_t j = 0; j < d; ++j) {
    if (is_constant(stats, j)) continue;
    for (std::size_t r = 0; r < n; ++r) v[r] = (x(r, j) - stats.mean[j]) / stats.norm[j];
    for (const auto& q : basis) {
      const double proj = dot(v, q);
      for (std::size_t r = 0; r < n; ++r) v[r] -= proj * q[r];
    }
    const double residual = std::sqrt(dot(v, v));
    if (residual * residual < tol) continue;
    for (auto& e : v) e /= residual;
    basis.push_back(v);
    keep[j] = true;
  }
  return keep;
}

RfeResult rfe(const ImportanceFn& importance, std::size_t dim, std::size_t keep_k,
              std::size_t step, std::span<const std::size_t> candidates) {
  std::vector<std::size_t> active;
  if (candidates.empty()) {
    active.resize(dim);
    std::iota(active.begin(), active.end(), std::size_t{0});
  } else {
    active.assign(candidates.begin(), candidates.end());
    std::sort(active.begin(), active.end());
  }
  if (keep_k == 0) throw ParameterError("keep_k must be at least 1");
  if (keep_k > active.size()) {
    throw ParameterError("keep_k " + std::to_string(keep_k) + " exceeds the " +
                         std::to_string(active.size()) + " candidate features");
  }
  if (step == 0) throw ParameterError("rfe step must be at least 1");

  RfeResult result;
  std::vector<std::size_t> order;
  while (active.size() > keep_k) {
    const auto imp = importance(active);
    if (imp.size() != active.size()) throw ParameterError("importance vector has wrong length");
    order.resize(active.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (imp[a] != imp[b]) return imp[a] < imp[b];
      return active[a] > active[b];
    });
    const std::size_t drop = std::min(step, active.size() - keep_k);
    std::vector<bool> gone(active.size(), false);
    for (std::size_t i = 0; i < drop; ++i) {
      gone[order[i]] = true;
      result.eliminated.push_back(active[order[i]]);
    }
    std::vector<std::size_t> next;
    for (std::size_t i = 0; i < active.size(); ++i) {
      if (!gone[i]) next.push_back(active[i]);
    }
    active = std::move(next);
  }

  const auto imp = importance(active);
  std::vector<std::size_t> order_final(active.size());
  std::iota(order_final.begin(), order_final.end(), std::size_t{0});
  std::stable_sort(order_final.begin(), order_final.end(),
                   [&](std::size_t a, std::size_t b) { return imp[a] > imp[b]; });
  for (auto i : order_final) result.ranking.push_back(active[i]);
  result.ranking.insert(result.ranking.end(), result.eliminated.rbegin(),
                        result.eliminated.rend());
  result.kept = active;
  return result;
}

ImportanceFn linear_importance(const Matrix& x, std::span<const double> y) {
  if (x.rows() != y.size() || x.rows() < 2) {
    throw ParameterError("linear importance needs matching rows (at least two)");
  }
  const Matrix z = Normalizer::fit(x).apply(x);
  auto gram = std::make_shared<Matrix>(gram_with_intercept(z));
  auto cross = std::make_shared<std::vector<double>>(cross_with_intercept(z, y));
  return [gram, cross](std::span<const std::size_t> active) {
    const std::size_t d = active.size() + 1;
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t i = 0; i < active.size(); ++i) idx[i + 1] = active[i] + 1;
    Matrix a(d, d);
    std::vector<double> b(d);
    for (std::size_t i = 0; i < d; ++i) {
      b[i] = (*cross)[idx[i]];
      for (std::size_t j = 0; j < d; ++j) a(i, j) = (*gram)(idx[i], idx[j]);
      if (i > 0) a(i, i) += 1e-8;
    }
    Matrix factor = a;
    const auto beta = cholesky_decompose(factor) ? cholesky_solve(factor, b)
                                                 : conjugate_gradient(a, b, 1e-14);
    std::vector<double> out(active.size());
    for (std::size_t i = 0; i < active.size(); ++i) out[i] = std::fabs(beta[i + 1]);
    return out;
  };
}

ImportanceFn forest_importance(const Matrix& x, std::span<const double> y, ForestConfig cfg) {
  return [&x, y, cfg](std::span<const std::size_t> active) {
    FitOptions options;
    options.columns.assign(active.begin(), active.end());
    options.standardize = false;
    const auto model = fit_forest(x, y, cfg, options);
    return std::get<ForestParams>(model.params).importances;
  };
}

std::vector<SignificanceRow> ols_significance(const Matrix& x, std::span<const double> y,
                                              std::span<const std::string> names) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (names.size() != d) throw ParameterError("one name per column is required");
  if (y.size() != n) throw ParameterError("rows and targets differ in count");
  if (n <= d + 1) throw ParameterError("significance needs more rows than columns + 1");

  const Matrix gram = gram_with_intercept(x);
  Matrix factor = gram;
  if (!cholesky_decompose(factor, 1e-11)) {
    throw RankDeficiencyError(
        "design matrix is rank deficient; prune correlated or dependent columns first");
  }
  const auto beta = cholesky_solve(factor, cross_with_intercept(x, y));
  double rss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double fit = beta[0] + dot(x.row(r), std::span(beta).subspan(1));
    rss += (y[r] - fit) * (y[r] - fit);
  }
  const double dof = static_cast<double>(n - d - 1);
  const double sigma2 = rss / dof;
  const Matrix inv = cholesky_inverse(factor);
  boost::math::students_t dist(dof);

  std::vector<SignificanceRow> rows;
  for (std::size_t j = 0; j < d; ++j) {
    SignificanceRow row;
    row.feature = names[j];
    row.coefficient = beta[j + 1];
    row.std_error = std::sqrt(sigma2 * inv(j + 1, j + 1));
    row.t_stat = row.std_error > 0.0 ? row.coefficient / row.std_error : 0.0;
    row.p_value = std::clamp(
        2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(row.t_stat))), 0.0, 1.0);
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::fabs(a.coefficient) > std::fabs(b.coefficient);
  });
  return rows;
}

SymmetricView symmetric_view(const Matrix& m, const FeatureSchema& schema) {
  if (m.cols() != schema.size()) throw SchemaError("matrix width does not match schema");
  const std::size_t p = schema.player_dim();
  const auto& pf = schema.player_feature_names();
  const std::size_t sk = schema.skill_offset();
  const std::size_t hc = schema.headcount_offset();

  SymmetricView v;
  for (const auto& f : pf) v.names.push_back("avg_" + f);
  for (const auto& f : pf) v.names.push_back("avg_std_" + f);
  for (const auto& f : pf) v.names.push_back("avg_" + f + "_abs_diff");
  for (const char* s : {"avg_skill", "avg_skill_abs_diff", "max_skill_abs_diff",
                        "min_skill_abs_diff", "avg_std_skill", "cnt_players",
                        "cnt_players_abs_diff"}) {
    v.names.emplace_back(s);
  }
  v.x = Matrix(m.rows(), v.names.size());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto out = v.x.row(r);
    std::size_t k = 0;
    for (std::size_t j = 0; j < p; ++j) out[k++] = 0.5 * (in[j] + in[schema.t2_offset() + j]);
    for (std::size_t j = 0; j < p; ++j) {
      out[k++] = 0.5 * (in[p + j] + in[schema.t2_offset() + p + j]);
    }
    for (std::size_t j = 0; j < p; ++j) out[k++] = in[schema.abs_diff_offset() + j];
    out[k++] = 0.5 * (in[sk + 0] + in[sk + 1]);
    out[k++] = in[sk + 3];
    out[k++] = std::fabs(in[sk + 4]);
    out[k++] = std::fabs(in[sk + 5]);
    out[k++] = 0.5 * (in[sk + 6] + in[sk + 7]);
    out[k++] = in[hc] + in[hc + 1];
    out[k++] = std::fabs(in[hc] - in[hc + 1]);
  }
  return v;
}

SignificanceReport significance_analysis(const Dataset& data, std::span<const std::size_t> rows,
                                         double r_max, std::size_t rfe_keep) {
  if (rows.size() < 3) throw ParameterError("significance analysis needs more rows");
  const auto view = symmetric_view(data.x.select_rows(rows), *data.schema);
  std::vector<double> y;
  y.reserve(rows.size());
  for (auto r : rows) y.push_back(std::fabs(data.score_diff[r]));
  const Matrix z = Normalizer::fit(view.x).apply(view.x);

  SignificanceReport report;
  report.samples = rows.size();
  const auto corr_keep = correlation_keep(z, r_max);
  std::vector<std::size_t> after_corr;
  for (std::size_t j = 0; j < corr_keep.size(); ++j) {
    if (corr_keep[j]) after_corr.push_back(j);
  }
  report.pruned_correlated = names_where(view.names, corr_keep, false);

  const Matrix zc = z.select_cols(after_corr);
  const auto dep_keep = dependency_keep(zc);
  std::vector<std::size_t> cols;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < after_corr.size(); ++i) {
    if (dep_keep[i]) {
      cols.push_back(after_corr[i]);
      names.push_back(view.names[after_corr[i]]);
    } else {
      report.pruned_dependent.push_back(view.names[after_corr[i]]);
    }
  }
  const Matrix design = z.select_cols(cols);
  report.rows = ols_significance(design, y, names);

  const std::size_t keep = std::min(rfe_keep, cols.size());
  if (keep > 0) {
    const auto ranked = rfe(linear_importance(design, y), cols.size(), keep);
    for (std::size_t i = 0; i < keep; ++i) report.rfe_top.push_back(names[ranked.ranking[i]]);
  }
  return report;
}

std::string describe_feature(const std::string& name) {
  std::string f = name;
  std::string lead = "Average ";
  std::string tail = " of the players";
  if (ends_with(f, "_abs_diff")) {
    f = f.substr(0, f.size() - 9);
    lead = "Absolute team difference in average ";
    tail = "";
  } else if (ends_with(f, "_diff")) {
    f = f.substr(0, f.size() - 5);
    lead = "Signed team difference in average ";
    tail = "";
  }
  if (f == "cnt_players") return lead == "Average " ? "Number of human players" : lead + "human headcount";
  if (f.rfind("max_skill", 0) == 0) return "Difference between the teams' highest skill ratings";
  if (f.rfind("min_skill", 0) == 0) return "Difference between the teams' lowest skill ratings";
  if (f.rfind("avg_std_", 0) == 0) {
    return "Within-team spread of " + gloss_player_feature(f.substr(8)) + ", averaged over teams";
  }
  for (const char* team : {"t1_", "t2_"}) {
    if (f.rfind(team, 0) == 0) {
      const std::string who = std::string(team) == "t1_" ? "Team 1 " : "Team 2 ";
      std::string rest = f.substr(3);
      if (rest.rfind("avg_", 0) == 0) return who + "average " + gloss_player_feature(rest.substr(4));
      if (rest.rfind("std_", 0) == 0) return who + "spread of " + gloss_player_feature(rest.substr(4));
      if (rest.rfind("cnt_", 0) == 0) return who + "human headcount";
    }
  }
  if (f.rfind("avg_", 0) == 0) f = f.substr(4);
  return lead + gloss_player_feature(f) + tail;
}

void write_significance_csv(std::ostream& out, const SignificanceReport& report) {
  out << "feature,coefficient,std_error,t_stat,p_value,description\n";
  for (const auto& r : report.rows) {
    out << r.feature << ',' << format_double(r.coefficient) << ',' << format_double(r.std_error)
        << ',' << format_double(r.t_stat) << ',' << format_double(r.p_value) << ",\""
        << describe_feature(r.feature) << "\"\n";
  }
}

std::string significance_table(const SignificanceReport& report, std::size_t max_rows) {
  std::ostringstream out;
  char line[512];
  std::snprintf(line, sizeof line, "%-36s %12s %10s  %s\n", "Feature", "Coefficient", "p",
                "Description");
  out << line;
  std::size_t shown = 0;
  for (const auto& r : report.rows) {
    if (shown++ == max_rows) break;
    std::snprintf(line, sizeof line, "%-36s %+12.3f %10.2e  %s\n", r.feature.c_str(),
                  r.coefficient, r.p_value, describe_feature(r.feature).c_str());
    out << line;
  }
  out << "samples: " << report.samples << "\n";
  out << "RFE top " << report.rfe_top.size() << ":";
  for (const auto& n : report.rfe_top) out << ' ' << n;
  out << "\n";
  return out.str();
}

}  // namespace cbal
