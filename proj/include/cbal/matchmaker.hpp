#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbal/features.hpp"
#include "cbal/models.hpp"
#include "cbal/rng.hpp"
#include "cbal/simworld.hpp"

namespace cbal {

struct QueueEntry {
  std::uint64_t player_id = 0;
  double skill_rating = 0.0;
  std::int64_t enqueue_tick = 0;
  std::string mode = "3v3";
};

/// Waiting players in arrival order.
class MatchQueue {
 public:
  /// Throws OrderingError when the timestamp precedes the last entry and
  /// InvariantError when the player is already queued.
  void push(QueueEntry entry);
  void remove(std::span<const std::uint64_t> ids);
  bool contains(std::uint64_t id) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<QueueEntry>& entries() const { return entries_; }

 private:
  std::vector<QueueEntry> entries_;
};

struct ProposalConfig {
  std::size_t team_size = 3;
  std::size_t num_roles = 3;
  /// Candidate pool = nearest pool_factor * team_size entries by rating.
  std::size_t pool_factor = 4;
  /// An anchor waiting longer than this draws from the whole queue.
  std::int64_t aging_ticks = 5;
};

/// Inputs needed to turn rosters into model features.
struct FeatureContext {
  const ProfileStore* store = nullptr;
  const FeatureConfig* features = nullptr;
  std::shared_ptr<const FeatureSchema> schema;
};

struct MatchProposal {
  Lineup lineups[2];
  TeamComposition teams[2];
  MatchFeatureVector features;
  /// Model output (score difference or win probability); set by the gate.
  double predicted = 0.0;
  /// Distance from perfect balance: |r| or |p - 1/2|. Used for fallback.
  double imbalance = 0.0;
  bool accepted = false;
};

/// Samples up to 2 * team_size humans: the longest-waiting entry plus others
/// from its rating neighbourhood. Teams split at random with team 1 taking the
/// larger share; roles are assigned at random within each team. Returns
/// nullopt (wait) when fewer than two humans are queued.
std::optional<MatchProposal> propose(const MatchQueue& queue, const ProposalConfig& cfg,
                                     const FeatureContext& ctx, std::int64_t now, Rng& rng);

/// Scores the proposal and decides. Returns true to launch.
using GateFn = std::function<bool(MatchProposal&)>;

/// Accept iff the model deems the proposal balanced. Throws SchemaError when
/// the model was trained on a different feature schema.
bool quality_gate(const TrainedModel& model, MatchProposal& proposal,
                  const BalanceThresholds& thresholds);
GateFn model_gate(std::shared_ptr<const TrainedModel> model, BalanceThresholds thresholds);
GateFn accept_all_gate();
GateFn reject_all_gate();

struct SessionConfig {
  std::size_t matches = 10000;
  std::size_t max_attempts = 10;
  /// Mean number of idle players joining the queue per tick (Poisson).
  double arrivals_per_tick = 4.5;
  std::size_t launches_per_tick = 1;
  std::size_t ticks_per_day = 250;
  std::int64_t first_day = 0;
  /// Fold launched matches into the profile store as they complete.
  bool update_profiles = true;
  ProposalConfig proposal;
  std::uint64_t seed = 1;
};

struct LaunchedMatch {
  MatchRecord record;
  MatchProposal proposal;
  std::size_t attempts = 0;
  bool fallback = false;
  std::int64_t tick = 0;
};

struct SessionSummary {
  std::size_t launched = 0;
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t fallbacks = 0;
  std::size_t ticks = 0;
  double mean_abs_score_diff = 0.0;
  double mean_wait_ticks = 0.0;
};

/// Runs a queue simulation until cfg.matches have launched. Each tick players
/// arrive, then up to launches_per_tick matches are formed: propose and gate
/// up to max_attempts times, launching the first accepted proposal or else the
/// attempt with the smallest imbalance. Writes JSON lines to `log` if given.
SessionSummary run_matchmaking(const Population& population, ProfileStore& store,
                               const FeatureConfig& features, const GateFn& gate,
                               const SessionConfig& cfg, std::ostream* log = nullptr,
                               const std::function<void(const LaunchedMatch&)>& on_launch = {});

}  // namespace cbal
