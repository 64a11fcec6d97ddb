#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cbal/rng.hpp"

namespace cbal {

/// Knobs of the synthetic player population and its season of matches.
///
/// Team strength is the sum of the members' latent skill in their assigned
/// role (bots count at the population 5th percentile). Each dropout multiplies
/// the strength by `dropout_penalty`, each bot slot by `bot_penalty`. Team i
/// then scores Poisson(base_rate * exp(beta * (S_i - S_j) / skill_scale)).
struct PopulationConfig {
  std::size_t num_players = 2000;
  std::vector<std::string> roles{"defense", "left_wing", "right_wing"};
  std::vector<std::string> actions{"goal", "assist", "hit", "takeaway"};
  std::size_t team_size = 3;
  double skill_scale = 500.0;
  double dropout_rate_min = 0.0;
  double dropout_rate_max = 0.9;
  /// Propensity is min + (max - min) * u^skew with u uniform; larger values
  /// concentrate dropouts in a few habitual quitters.
  double dropout_skew = 8.0;
  std::size_t days = 90;
  std::size_t matches_per_day = 250;
  std::uint64_t seed = 1;

  double base_rate = 2.0;
  double beta = 1.0;
  double skill_mean = 1500.0;
  double skill_sd = 150.0;
  double role_skill_sd = 50.0;
  double rating_noise_sd = 100.0;
  double dropout_penalty = 0.93;
  double bot_penalty = 0.9;
  /// Probability that a roster slot in a season match is filled by a bot.
  double bot_slot_prob = 0.1;
  /// Cap on bot slots per team in season matches.
  std::size_t max_bots_per_team = 1;
  /// Probability that a player takes their strongest free role when rosters
  /// are formed; otherwise roles are assigned uniformly at random.
  double role_preference = 0.6;
  /// Additive log-rate bonus for team 1. Zero keeps the law label-symmetric.
  double home_advantage = 0.0;

  /// Throws ConfigError on invalid settings.
  void validate() const;
  std::string mode_name() const;
};

struct LatentPlayer {
  std::uint64_t id = 0;
  std::vector<double> role_skill;
  double aggressiveness = 0.0;
  double dropout_propensity = 0.0;
  double skill_rating = 0.0;

  double mean_skill() const;
  std::size_t best_role() const;
};

struct Population {
  PopulationConfig config;
  std::vector<LatentPlayer> players;
  /// Latent skill used for every bot slot.
  double bot_skill = 0.0;

  const LatentPlayer& at(std::uint64_t id) const;
};

Population generate_population(const PopulationConfig& cfg);

struct LineupSlot {
  std::uint64_t player_id = 0;
  std::size_t role = 0;
};

/// The human members of one team with their roles; the remaining
/// team_size - humans.size() slots are bots.
struct Lineup {
  std::vector<LineupSlot> humans;
};

struct RosterEntry {
  std::uint64_t player_id = 0;
  std::size_t role = 0;
  /// Displayed skill rating at matchmaking time.
  double skill_rating = 0.0;
  /// Indexed like PopulationConfig::actions.
  std::vector<std::uint32_t> action_counts;
  bool dropout = false;
};

struct TeamResult {
  std::vector<RosterEntry> roster;
  std::uint32_t human_count = 0;
  std::uint32_t final_score = 0;
};

struct MatchRecord {
  std::uint64_t match_id = 0;
  std::int64_t day_index = 0;
  std::size_t team_size = 3;
  TeamResult teams[2];
  std::int64_t score_diff = 0;

  std::string mode() const;
  /// Index of the team the player is on, or -1.
  int team_of(std::uint64_t player_id) const;
  const RosterEntry* find(std::uint64_t player_id) const;
  /// Throws InvariantError when a structural invariant is broken.
  void check_invariants(std::size_t num_roles, std::size_t num_actions) const;

  friend bool operator==(const MatchRecord&, const MatchRecord&);
};

bool operator==(const RosterEntry&, const RosterEntry&);
bool operator==(const TeamResult&, const TeamResult&);

/// Simulates one match between two lineups. Bots fill missing slots.
MatchRecord simulate_match(const Population& population, const Lineup& team1,
                           const Lineup& team2, Rng& rng);

struct Season {
  Population population;
  std::vector<MatchRecord> matches;
};

/// Emits days * matches_per_day records in day order to `sink`.
Population run_season(const PopulationConfig& cfg,
                      const std::function<void(MatchRecord&&)>& sink);
Season run_season(const PopulationConfig& cfg);

}  // namespace cbal
