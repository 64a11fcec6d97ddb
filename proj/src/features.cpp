#include "cbal/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "cbal/error.hpp"
#include "cbal/rng.hpp"

namespace cbal {

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void recompute_ratios(PlayerProfile& p) {
  p.freq_wins = ratio(p.num_wins, p.num_matches);
  for (std::size_t r = 0; r < p.num_role.size(); ++r) {
    p.freq_role[r] = ratio(p.num_role[r], p.num_matches);
  }
  for (std::size_t a = 0; a < p.num_action.size(); ++a) {
    p.avg_num_action[a] = ratio(p.num_action[a], p.num_matches);
  }
  p.freq_dropout = ratio(p.num_dropout, p.num_matches);
}

double population_sd(std::span<const double> v, double mean) {
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------- schema

FeatureSchema::FeatureSchema(std::vector<std::string> roles, std::vector<std::string> actions)
    : roles_(std::move(roles)), actions_(std::move(actions)) {
  player_names_ = {"num_matches", "num_wins", "freq_wins"};
  for (const auto& r : roles_) player_names_.push_back("num_role_" + r);
  for (const auto& r : roles_) player_names_.push_back("freq_role_" + r);
  for (const auto& a : actions_) player_names_.push_back("num_action_" + a);
  for (const auto& a : actions_) player_names_.push_back("avg_num_action_" + a);
  player_names_.push_back("num_dropout");
  player_names_.push_back("freq_dropout");

  for (const char* team : {"t1", "t2"}) {
    for (const auto& f : player_names_) names_.push_back(std::string(team) + "_avg_" + f);
    for (const auto& f : player_names_) names_.push_back(std::string(team) + "_std_" + f);
  }
  for (const auto& f : player_names_) names_.push_back("avg_" + f + "_abs_diff");
  for (const auto& f : player_names_) names_.push_back("avg_" + f + "_diff");
  for (const char* s : {"t1_avg_skill", "t2_avg_skill", "avg_skill_diff", "avg_skill_abs_diff",
                        "max_skill_diff", "min_skill_diff", "t1_std_skill", "t2_std_skill",
                        "t1_cnt_players", "t2_cnt_players"}) {
    names_.emplace_back(s);
  }
}

std::size_t FeatureSchema::index_of(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw LookupError("no feature named '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

std::uint64_t FeatureSchema::hash() const {
  std::uint64_t h = fnv1a("features/1");
  for (const auto& n : names_) {
    h = fnv1a(n, h);
    h = fnv1a("\n", h);
  }
  return h;
}

std::string FeatureSchema::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = "features/1";
  j["roles"] = roles_;
  j["actions"] = actions_;
  j["hash"] = hash();
  j["names"] = names_;
  return j.dump(2);
}

FeatureSchema FeatureSchema::from_json(std::string_view text) {
  try {
    auto j = nlohmann::json::parse(text);
    if (j.value("schema", "") != "features/1") throw SchemaError("not a features/1 schema");
    FeatureSchema schema(j.at("roles").get<std::vector<std::string>>(),
                         j.at("actions").get<std::vector<std::string>>());
    if (j.at("names").get<std::vector<std::string>>() != schema.names()) {
      throw SchemaError("schema names do not match the role/action vocabulary");
    }
    return schema;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad schema JSON: ") + e.what());
  }
}

std::shared_ptr<const FeatureSchema> FeatureConfig::schema() const {
  return std::make_shared<const FeatureSchema>(roles, actions);
}

// ---------------------------------------------------------------- profiles

PlayerProfile PlayerProfile::empty(std::size_t num_roles, std::size_t num_actions) {
  PlayerProfile p;
  p.num_role.assign(num_roles, 0);
  p.freq_role.assign(num_roles, 0.0);
  p.num_action.assign(num_actions, 0);
  p.avg_num_action.assign(num_actions, 0.0);
  return p;
}

PlayerProfile update_player_profile(PlayerProfile profile, const MatchRecord& record,
                                    std::uint64_t player_id) {
  const int team = record.team_of(player_id);
  if (team < 0) {
    throw LookupError("player " + std::to_string(player_id) + " not in match " +
                      std::to_string(record.match_id));
  }
  if (record.day_index < profile.last_day) {
    throw OrderingError("match " + std::to_string(record.match_id) + " on day " +
                        std::to_string(record.day_index) + " precedes last update day " +
                        std::to_string(profile.last_day));
  }
  const RosterEntry& entry = *record.find(player_id);
  if (entry.role >= profile.num_role.size() ||
      entry.action_counts.size() != profile.num_action.size()) {
    throw SchemaError("record vocabulary does not match profile dimensions");
  }
  const auto mine = record.teams[team].final_score;
  const auto theirs = record.teams[1 - team].final_score;

  profile.num_matches += 1;
  if (mine > theirs) profile.num_wins += 1;
  profile.num_role[entry.role] += 1;
  for (std::size_t a = 0; a < entry.action_counts.size(); ++a) {
    profile.num_action[a] += entry.action_counts[a];
  }
  if (entry.dropout) profile.num_dropout += 1;
  profile.last_day = record.day_index;
  recompute_ratios(profile);
  return profile;
}

std::vector<double> player_features(const PlayerProfile& p, std::span<const double> cold_start) {
  const std::size_t dim = 5 + 2 * p.num_role.size() + 2 * p.num_action.size();
  if (p.num_matches == 0) {
    if (cold_start.empty()) return std::vector<double>(dim, 0.0);
    if (cold_start.size() != dim) throw SchemaError("cold-start vector has wrong dimension");
    return {cold_start.begin(), cold_start.end()};
  }
  std::vector<double> v;
  v.reserve(dim);
  v.push_back(static_cast<double>(p.num_matches));
  v.push_back(static_cast<double>(p.num_wins));
  v.push_back(p.freq_wins);
  for (auto n : p.num_role) v.push_back(static_cast<double>(n));
  for (auto f : p.freq_role) v.push_back(f);
  for (auto n : p.num_action) v.push_back(static_cast<double>(n));
  for (auto f : p.avg_num_action) v.push_back(f);
  v.push_back(static_cast<double>(p.num_dropout));
  v.push_back(p.freq_dropout);
  return v;
}

TeamFeatureVector team_features(std::span<const std::vector<double>> members) {
  if (members.empty()) throw AggregationError("team has no human members to aggregate");
  const std::size_t dim = members.front().size();
  TeamFeatureVector out{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  for (const auto& m : members) {
    if (m.size() != dim) throw AggregationError("member vectors differ in dimension");
    for (std::size_t i = 0; i < dim; ++i) out.mean[i] += m[i];
  }
  const double n = static_cast<double>(members.size());
  for (auto& v : out.mean) v /= n;
  for (const auto& m : members) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = m[i] - out.mean[i];
      out.stddev[i] += d * d;
    }
  }
  for (auto& v : out.stddev) v = std::sqrt(v / n);
  return out;
}

MatchFeatureVector match_features(const TeamFeatureVector& team1, const TeamFeatureVector& team2,
                                  std::span<const double> skill_ratings1,
                                  std::span<const double> skill_ratings2,
                                  std::array<std::uint32_t, 2> human_counts,
                                  std::shared_ptr<const FeatureSchema> schema) {
  const std::size_t p = schema->player_dim();
  for (const auto* t : {&team1, &team2}) {
    if (t->mean.size() != p || t->stddev.size() != p) {
      throw SchemaError("team feature dimension " + std::to_string(t->mean.size()) +
                        " does not match schema player dimension " + std::to_string(p));
    }
  }
  if (skill_ratings1.empty() || skill_ratings2.empty()) {
    throw AggregationError("each team needs at least one rated human");
  }

  MatchFeatureVector out;
  out.values.reserve(schema->size());
  auto& v = out.values;
  for (const auto* t : {&team1, &team2}) {
    v.insert(v.end(), t->mean.begin(), t->mean.end());
    v.insert(v.end(), t->stddev.begin(), t->stddev.end());
  }
  for (std::size_t i = 0; i < p; ++i) v.push_back(std::fabs(team1.mean[i] - team2.mean[i]));
  for (std::size_t i = 0; i < p; ++i) v.push_back(team1.mean[i] - team2.mean[i]);

  const auto mean_of = [](std::span<const double> s) {
    double sum = 0.0;
    for (double x : s) sum += x;
    return sum / static_cast<double>(s.size());
  };
  const double avg1 = mean_of(skill_ratings1);
  const double avg2 = mean_of(skill_ratings2);
  const auto [min1, max1] = std::minmax_element(skill_ratings1.begin(), skill_ratings1.end());
  const auto [min2, max2] = std::minmax_element(skill_ratings2.begin(), skill_ratings2.end());
  v.push_back(avg1);
  v.push_back(avg2);
  v.push_back(avg1 - avg2);
  v.push_back(std::fabs(avg1 - avg2));
  v.push_back(*max1 - *max2);
  v.push_back(*min1 - *min2);
  v.push_back(population_sd(skill_ratings1, avg1));
  v.push_back(population_sd(skill_ratings2, avg2));
  v.push_back(static_cast<double>(human_counts[0]));
  v.push_back(static_cast<double>(human_counts[1]));

  if (v.size() != schema->size()) throw SchemaError("assembled vector does not match schema");
  for (double x : v) {
    if (!std::isfinite(x)) throw InvariantError("non-finite match feature");
  }
  out.schema = std::move(schema);
  return out;
}

// ---------------------------------------------------------------- store

const PlayerProfile& ProfileStore::profile(std::uint64_t player_id) const {
  auto it = profiles_.find(player_id);
  if (it != profiles_.end()) return it->second;
  if (!empty_) empty_ = PlayerProfile::empty(num_roles_, num_actions_);
  return *empty_;
}

void ProfileStore::apply(const MatchRecord& record) {
  if (record.day_index < max_day_) {
    throw OrderingError("record day " + std::to_string(record.day_index) +
                        " is earlier than store day " + std::to_string(max_day_));
  }
  for (const auto& team : record.teams) {
    for (const auto& e : team.roster) {
      auto it = profiles_.find(e.player_id);
      if (it == profiles_.end()) {
        it = profiles_.emplace(e.player_id, PlayerProfile::empty(num_roles_, num_actions_)).first;
      }
      it->second = update_player_profile(std::move(it->second), record, e.player_id);
    }
  }
  max_day_ = record.day_index;
  ++records_;
}

MatchFeatureVector assemble_match_features(const ProfileStore& store, const FeatureConfig& cfg,
                                           const std::shared_ptr<const FeatureSchema>& schema,
                                           const TeamComposition& team1,
                                           const TeamComposition& team2) {
  TeamFeatureVector teams[2];
  const TeamComposition* sides[2] = {&team1, &team2};
  std::vector<std::vector<double>> members;
  for (int t = 0; t < 2; ++t) {
    members.clear();
    for (auto id : sides[t]->player_ids) {
      members.push_back(player_features(store.profile(id), cfg.cold_start));
    }
    teams[t] = team_features(members);
  }
  return match_features(teams[0], teams[1], team1.skill_ratings, team2.skill_ratings,
                        {static_cast<std::uint32_t>(team1.player_ids.size()),
                         static_cast<std::uint32_t>(team2.player_ids.size())},
                        schema);
}

std::vector<std::size_t> Dataset::rows_for_days(std::int64_t first, std::int64_t last) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < day.size(); ++i) {
    if (day[i] >= first && day[i] <= last) rows.push_back(i);
  }
  return rows;
}

Dataset build_dataset(std::span<const MatchRecord> log, const FeatureConfig& cfg) {
  Dataset data;
  data.schema = cfg.schema();
  data.x = Matrix(0, data.schema->size());
  data.x.reserve_rows(log.size());
  ProfileStore store(cfg.roles.size(), cfg.actions.size());

  std::size_t begin = 0;
  while (begin < log.size()) {
    const std::int64_t day = log[begin].day_index;
    std::size_t end = begin;
    while (end < log.size() && log[end].day_index == day) ++end;
    if (end < log.size() && log[end].day_index < day) {
      throw OrderingError("log is not sorted by day_index");
    }
    // Assemble the whole day from the frozen store, then fold it.
    for (std::size_t i = begin; i < end; ++i) {
      const auto& rec = log[i];
      rec.check_invariants(cfg.roles.size(), cfg.actions.size());
      TeamComposition comp[2];
      for (int t = 0; t < 2; ++t) {
        for (const auto& e : rec.teams[t].roster) {
          comp[t].player_ids.push_back(e.player_id);
          comp[t].skill_ratings.push_back(e.skill_rating);
        }
      }
      auto m = assemble_match_features(store, cfg, data.schema, comp[0], comp[1]);
      data.x.append_row(m.values);
      data.score_diff.push_back(static_cast<double>(rec.score_diff));
      data.day.push_back(rec.day_index);
      data.match_id.push_back(rec.match_id);
      data.history_max_day.push_back(store.max_day_applied());
    }
    for (std::size_t i = begin; i < end; ++i) store.apply(log[i]);
    begin = end;
  }
  return data;
}

void write_feature_csv(std::ostream& out, const Dataset& data) {
  out << "match_id,day_index,score_diff";
  for (const auto& n : data.schema->names()) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    out << data.match_id[r] << ',' << data.day[r] << ',' << format_double(data.score_diff[r]);
    for (double v : data.x.row(r)) out << ',' << format_double(v);
    out << '\n';
  }
}

// ---------------------------------------------------------------- normalizer

Normalizer Normalizer::fit(const Matrix& rows) {
  if (rows.rows() < 2) throw ParameterError("normalizer needs at least two rows");
  const std::size_t d = rows.cols();
  const double n = static_cast<double>(rows.rows());
  Normalizer z;
  z.mean_.assign(d, 0.0);
  z.stddev_.assign(d, 0.0);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    auto row = rows.row(r);
    for (std::size_t j = 0; j < d; ++j) z.mean_[j] += row[j];
  }
  for (auto& m : z.mean_) m /= n;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    auto row = rows.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = row[j] - z.mean_[j];
      z.stddev_[j] += dv * dv;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(z.stddev_[j] / n);
    z.stddev_[j] = sd > 1e-12 * std::max(1.0, std::fabs(z.mean_[j])) ? sd : 0.0;
  }
  return z;
}

Normalizer Normalizer::identity(std::size_t dim) {
  Normalizer z;
  z.mean_.assign(dim, 0.0);
  z.stddev_.assign(dim, 1.0);
  return z;
}

Normalizer Normalizer::from_parts(std::vector<double> mean, std::vector<double> stddev) {
  if (mean.size() != stddev.size()) throw SchemaError("normalizer parts differ in size");
  for (double s : stddev) {
    if (!(s >= 0.0)) throw SchemaError("negative normalizer scale");
  }
  Normalizer z;
  z.mean_ = std::move(mean);
  z.stddev_ = std::move(stddev);
  return z;
}

double Normalizer::apply_one(std::size_t j, double value) const {
  return stddev_[j] == 0.0 ? 0.0 : (value - mean_[j]) / stddev_[j];
}

std::vector<double> Normalizer::apply(std::span<const double> row) const {
  if (row.size() != dim()) {
    throw SchemaError("row dimension " + std::to_string(row.size()) +
                      " does not match normalizer dimension " + std::to_string(dim()));
  }
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = apply_one(j, row[j]);
  return out;
}

Matrix Normalizer::apply(const Matrix& rows) const {
  if (rows.cols() != dim()) throw SchemaError("matrix width does not match normalizer");
  Matrix out(rows.rows(), rows.cols());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    auto src = rows.row(r);
    auto dst = out.row(r);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = apply_one(j, src[j]);
  }
  return out;
}

// ---------------------------------------------------------------- mask

FeatureMask FeatureMask::all(std::size_t dim, std::string provenance) {
  return {std::vector<bool>(dim, true), std::move(provenance)};
}

FeatureMask FeatureMask::from_indices(std::size_t dim, std::span<const std::size_t> kept,
                                      std::string provenance) {
  FeatureMask m{std::vector<bool>(dim, false), std::move(provenance)};
  for (auto i : kept) {
    if (i >= dim) throw SchemaError("mask index out of range");
    m.keep[i] = true;
  }
  return m;
}

std::size_t FeatureMask::count() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
}

std::vector<std::size_t> FeatureMask::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) out.push_back(i);
  }
  return out;
}

std::string FeatureMask::to_json(const FeatureSchema& schema) const {
  if (keep.size() != schema.size()) throw SchemaError("mask length does not match schema");
  nlohmann::ordered_json j;
  j["schema"] = "mask/1";
  j["schema_hash"] = schema.hash();
  j["provenance"] = provenance;
  std::vector<std::string> kept;
  for (auto i : indices()) kept.push_back(schema.names()[i]);
  j["kept"] = kept;
  return j.dump(2);
}

FeatureMask FeatureMask::from_json(std::string_view text, const FeatureSchema& schema) {
  try {
    auto j = nlohmann::json::parse(text);
    if (j.value("schema", "") != "mask/1") throw SchemaError("not a mask/1 document");
    if (j.at("schema_hash").get<std::uint64_t>() != schema.hash()) {
      throw SchemaError("mask was produced for a different feature schema");
    }
    std::vector<std::size_t> kept;
    for (const auto& name : j.at("kept")) kept.push_back(schema.index_of(name.get<std::string>()));
    if (kept.empty()) throw SchemaError("mask keeps no coordinates");
    return from_indices(schema.size(), kept, j.value("provenance", ""));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad mask JSON: ") + e.what());
  }
}

}  // namespace cbal
