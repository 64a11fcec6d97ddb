#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cbal/linalg.hpp"
#include "cbal/matchlog.hpp"
#include "cbal/simworld.hpp"

namespace cbal {

/// Ordered coordinate names of the match feature vector.
///
/// Layout for P player features: t1 block (P means, P standard deviations),
/// t2 block (same), absolute team-mean differences (P), signed team-mean
/// differences (P), skill block (8), human headcounts (2). Total 6P + 10.
class FeatureSchema {
 public:
  static constexpr std::size_t kSkillBlock = 8;
  static constexpr std::size_t kHeadcountBlock = 2;

  FeatureSchema(std::vector<std::string> roles, std::vector<std::string> actions);

  std::size_t size() const { return names_.size(); }
  std::size_t player_dim() const { return player_names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<std::string>& player_feature_names() const { return player_names_; }
  const std::vector<std::string>& roles() const { return roles_; }
  const std::vector<std::string>& actions() const { return actions_; }

  std::size_t t1_offset() const { return 0; }
  std::size_t t2_offset() const { return 2 * player_dim(); }
  std::size_t abs_diff_offset() const { return 4 * player_dim(); }
  std::size_t signed_diff_offset() const { return 5 * player_dim(); }
  std::size_t skill_offset() const { return 6 * player_dim(); }
  std::size_t headcount_offset() const { return 6 * player_dim() + kSkillBlock; }

  /// Throws LookupError for unknown names.
  std::size_t index_of(std::string_view name) const;
  /// FNV-1a over the coordinate names; identifies a feature layout.
  std::uint64_t hash() const;

  std::string to_json() const;
  static FeatureSchema from_json(std::string_view text);

  friend bool operator==(const FeatureSchema& a, const FeatureSchema& b) {
    return a.names_ == b.names_;
  }

 private:
  std::vector<std::string> roles_;
  std::vector<std::string> actions_;
  std::vector<std::string> player_names_;
  std::vector<std::string> names_;
};

struct FeatureConfig {
  std::vector<std::string> roles{"defense", "left_wing", "right_wing"};
  std::vector<std::string> actions{"goal", "assist", "hit", "takeaway"};
  /// Player vector used for players without history. Empty means all zeros.
  std::vector<double> cold_start;

  std::size_t player_dim() const { return 5 + 2 * roles.size() + 2 * actions.size(); }
  std::shared_ptr<const FeatureSchema> schema() const;
  Vocabulary vocabulary() const { return {roles, actions}; }
};

/// Cumulative per-player statistics.
struct PlayerProfile {
  std::uint64_t num_matches = 0;
  std::uint64_t num_wins = 0;
  double freq_wins = 0.0;
  std::vector<std::uint64_t> num_role;
  std::vector<double> freq_role;
  std::vector<std::uint64_t> num_action;
  std::vector<double> avg_num_action;
  std::uint64_t num_dropout = 0;
  double freq_dropout = 0.0;
  /// Day of the latest folded record, -1 before any.
  std::int64_t last_day = -1;

  static PlayerProfile empty(std::size_t num_roles, std::size_t num_actions);

  friend bool operator==(const PlayerProfile&, const PlayerProfile&) = default;
};

/// Folds one completed match into a profile. Ties count as non-wins.
PlayerProfile update_player_profile(PlayerProfile profile, const MatchRecord& record,
                                    std::uint64_t player_id);

/// Feature vector in schema order; zero-match profiles yield the cold-start vector.
std::vector<double> player_features(const PlayerProfile& profile,
                                    std::span<const double> cold_start = {});

struct TeamFeatureVector {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Per-coordinate mean and population standard deviation over human members.
TeamFeatureVector team_features(std::span<const std::vector<double>> members);

struct MatchFeatureVector {
  std::vector<double> values;
  std::shared_ptr<const FeatureSchema> schema;
};

MatchFeatureVector match_features(const TeamFeatureVector& team1, const TeamFeatureVector& team2,
                                  std::span<const double> skill_ratings1,
                                  std::span<const double> skill_ratings2,
                                  std::array<std::uint32_t, 2> human_counts,
                                  std::shared_ptr<const FeatureSchema> schema);

/// Online profile store. Single writer; records must arrive in day order.
class ProfileStore {
 public:
  ProfileStore(std::size_t num_roles, std::size_t num_actions)
      : num_roles_(num_roles), num_actions_(num_actions) {}

  /// Profile of a player; an empty profile when the player has no history.
  const PlayerProfile& profile(std::uint64_t player_id) const;
  void apply(const MatchRecord& record);

  /// Largest day_index folded so far, -1 when empty.
  std::int64_t max_day_applied() const { return max_day_; }
  std::size_t records_applied() const { return records_; }
  std::size_t num_players() const { return profiles_.size(); }

 private:
  std::size_t num_roles_;
  std::size_t num_actions_;
  std::unordered_map<std::uint64_t, PlayerProfile> profiles_;
  mutable std::optional<PlayerProfile> empty_;
  std::int64_t max_day_ = -1;
  std::size_t records_ = 0;
};

/// Human members of one side of a prospective match.
struct TeamComposition {
  std::vector<std::uint64_t> player_ids;
  std::vector<double> skill_ratings;
};

/// Assembles M = (t1, t2, m) from the store's current profiles.
MatchFeatureVector assemble_match_features(const ProfileStore& store, const FeatureConfig& cfg,
                                           const std::shared_ptr<const FeatureSchema>& schema,
                                           const TeamComposition& team1,
                                           const TeamComposition& team2);

/// Rows of match features with outcomes and a leakage audit trail.
struct Dataset {
  std::shared_ptr<const FeatureSchema> schema;
  Matrix x;
  std::vector<double> score_diff;
  std::vector<std::int64_t> day;
  std::vector<std::uint64_t> match_id;
  /// Max day folded into the profile store when the row was assembled.
  std::vector<std::int64_t> history_max_day;

  std::size_t size() const { return score_diff.size(); }
  /// Rows whose day lies in [first, last].
  std::vector<std::size_t> rows_for_days(std::int64_t first, std::int64_t last) const;
};

/// Builds features for every record using profiles frozen at the start of its
/// day, then folds that day's records.
Dataset build_dataset(std::span<const MatchRecord> log, const FeatureConfig& cfg);

void write_feature_csv(std::ostream& out, const Dataset& data);

/// Z-score normalizer. Constant coordinates map to zero.
class Normalizer {
 public:
  Normalizer() = default;
  static Normalizer fit(const Matrix& rows);
  static Normalizer identity(std::size_t dim);
  static Normalizer from_parts(std::vector<double> mean, std::vector<double> stddev);

  std::size_t dim() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return stddev_; }

  std::vector<double> apply(std::span<const double> row) const;
  double apply_one(std::size_t coord, double value) const;
  Matrix apply(const Matrix& rows) const;

  friend bool operator==(const Normalizer&, const Normalizer&) = default;

 private:
  std::vector<double> mean_;
  std::vector<double> stddev_;
};

/// Boolean keep-flag per schema coordinate.
struct FeatureMask {
  std::vector<bool> keep;
  std::string provenance;

  static FeatureMask all(std::size_t dim, std::string provenance = "all");
  static FeatureMask from_indices(std::size_t dim, std::span<const std::size_t> kept,
                                  std::string provenance);
  std::size_t size() const { return keep.size(); }
  std::size_t count() const;
  std::vector<std::size_t> indices() const;

  std::string to_json(const FeatureSchema& schema) const;
  static FeatureMask from_json(std::string_view text, const FeatureSchema& schema);
};

std::string format_double(double v);

}  // namespace cbal
