#include "cbal/matchmaker.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "cbal/error.hpp"
#include "cbal/harness.hpp"

namespace cbal {

namespace {

using json = nlohmann::ordered_json;

Lineup assign_random_roles(std::span<const std::uint64_t> ids, const ProposalConfig& cfg,
                           Rng& rng) {
  std::vector<std::size_t> roles(cfg.team_size);
  for (std::size_t s = 0; s < cfg.team_size; ++s) roles[s] = s % cfg.num_roles;
  rng.shuffle(std::span(roles));
  Lineup lineup;
  for (std::size_t i = 0; i < ids.size(); ++i) lineup.humans.push_back({ids[i], roles[i]});
  return lineup;
}

json proposal_json(const MatchProposal& p) {
  json teams = json::array();
  for (const auto& t : p.teams) teams.push_back(t.player_ids);
  return {{"teams", teams},
          {"human_count", {p.teams[0].player_ids.size(), p.teams[1].player_ids.size()}},
          {"predicted", p.predicted}};
}

}  // namespace

void MatchQueue::push(QueueEntry entry) {
  if (!entries_.empty() && entry.enqueue_tick < entries_.back().enqueue_tick) {
    throw OrderingError("queue timestamps must be non-decreasing");
  }
  if (contains(entry.player_id)) {
    throw InvariantError("player " + std::to_string(entry.player_id) + " is already queued");
  }
  entries_.push_back(std::move(entry));
}

void MatchQueue::remove(std::span<const std::uint64_t> ids) {
  std::erase_if(entries_, [&](const QueueEntry& e) {
    return std::find(ids.begin(), ids.end(), e.player_id) != ids.end();
  });
}

bool MatchQueue::contains(std::uint64_t id) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const QueueEntry& e) { return e.player_id == id; });
}

std::optional<MatchProposal> propose(const MatchQueue& queue, const ProposalConfig& cfg,
                                     const FeatureContext& ctx, std::int64_t now, Rng& rng) {
  if (ctx.store == nullptr || ctx.features == nullptr || !ctx.schema) {
    throw ParameterError("proposal needs a profile store, feature config and schema");
  }
  if (cfg.team_size == 0 || cfg.num_roles == 0) throw ParameterError("empty team or role set");
  const auto& entries = queue.entries();
  if (entries.size() < 2) return std::nullopt;

  // Pool around the longest-waiting entry; an aged anchor may use everyone.
  const QueueEntry& anchor = entries.front();
  std::vector<std::size_t> pool(entries.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  const std::size_t pool_size = cfg.pool_factor * cfg.team_size;
  if (now - anchor.enqueue_tick <= cfg.aging_ticks && pool.size() > pool_size) {
    std::stable_sort(pool.begin() + 1, pool.end(), [&](std::size_t a, std::size_t b) {
      return std::fabs(entries[a].skill_rating - anchor.skill_rating) <
             std::fabs(entries[b].skill_rating - anchor.skill_rating);
    });
    pool.resize(pool_size);
  }

  const std::size_t count = std::min(2 * cfg.team_size, pool.size());
  for (std::size_t k = 1; k < count; ++k) {
    const std::size_t j = k + rng.uniform_index(pool.size() - k);
    std::swap(pool[k], pool[j]);
  }
  std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
  rng.shuffle(std::span(chosen));

  std::size_t h1 = cfg.team_size;
  if (count < 2 * cfg.team_size) {
    const std::size_t lo = (count + 1) / 2;
    const std::size_t hi = std::min(cfg.team_size, count - 1);
    h1 = lo + rng.uniform_index(hi - lo + 1);
  }

  MatchProposal p;
  std::vector<std::uint64_t> ids[2];
  for (std::size_t i = 0; i < count; ++i) {
    const auto& e = entries[chosen[i]];
    const int t = i < h1 ? 0 : 1;
    ids[t].push_back(e.player_id);
    p.teams[t].player_ids.push_back(e.player_id);
    p.teams[t].skill_ratings.push_back(e.skill_rating);
  }
  for (int t = 0; t < 2; ++t) p.lineups[t] = assign_random_roles(ids[t], cfg, rng);
  p.features = assemble_match_features(*ctx.store, *ctx.features, ctx.schema, p.teams[0],
                                       p.teams[1]);
  return p;
}

bool quality_gate(const TrainedModel& model, MatchProposal& proposal,
                  const BalanceThresholds& thresholds) {
  proposal.predicted = predict(model, proposal.features);
  proposal.imbalance = targets_probability(model.kind) ? std::fabs(proposal.predicted - 0.5)
                                                       : std::fabs(proposal.predicted);
  proposal.accepted = decide_balance(model, proposal.predicted, thresholds) == 1;
  return proposal.accepted;
}

GateFn model_gate(std::shared_ptr<const TrainedModel> model, BalanceThresholds thresholds) {
  if (!model) throw ParameterError("model gate needs a model");
  thresholds.validate();
  return [model = std::move(model), thresholds](MatchProposal& p) {
    return quality_gate(*model, p, thresholds);
  };
}

GateFn accept_all_gate() {
  return [](MatchProposal& p) { return p.accepted = true; };
}

GateFn reject_all_gate() {
  return [](MatchProposal& p) { return p.accepted = false; };
}

SessionSummary run_matchmaking(const Population& population, ProfileStore& store,
                               const FeatureConfig& features, const GateFn& gate,
                               const SessionConfig& cfg, std::ostream* log,
                               const std::function<void(const LaunchedMatch&)>& on_launch) {
  if (!(cfg.arrivals_per_tick > 0.0)) throw ParameterError("arrivals_per_tick must be positive");
  if (cfg.max_attempts == 0 || cfg.launches_per_tick == 0 || cfg.ticks_per_day == 0) {
    throw ParameterError("attempt, launch and day budgets must be positive");
  }
  if (cfg.proposal.team_size != population.config.team_size) {
    throw ParameterError("proposal team size differs from the population's mode");
  }
  if (cfg.first_day < store.max_day_applied()) {
    throw ParameterError("session must start on or after the store's last day");
  }
  const std::size_t n_players = population.players.size();
  if (n_players < 2 * cfg.proposal.team_size) throw ParameterError("population too small");

  const auto schema = features.schema();
  const FeatureContext ctx{&store, &features, schema};
  Rng arrivals(derive_seed(cfg.seed, "mm/arrivals"));
  Rng proposer(derive_seed(cfg.seed, "mm/proposals"));
  Rng outcomes(derive_seed(cfg.seed, "mm/outcomes"));

  MatchQueue queue;
  std::vector<bool> queued(n_players, false);
  SessionSummary summary;
  double abs_diff_total = 0.0;
  double wait_total = 0.0;
  std::size_t waited_players = 0;
  const std::string mode = population.config.mode_name();

  for (std::int64_t tick = 0; summary.launched < cfg.matches; ++tick) {
    const auto joining = arrivals.poisson(cfg.arrivals_per_tick);
    for (std::uint32_t k = 0; k < joining && queue.size() < n_players; ++k) {
      std::uint64_t id = arrivals.uniform_index(n_players);
      while (queued[id]) id = arrivals.uniform_index(n_players);
      queued[id] = true;
      queue.push({id, population.players[id].skill_rating, tick, mode});
    }

    for (std::size_t l = 0; l < cfg.launches_per_tick && summary.launched < cfg.matches; ++l) {
      std::optional<MatchProposal> chosen;
      std::size_t attempts = 0;
      bool fallback = false;
      std::optional<MatchProposal> best;
      while (attempts < cfg.max_attempts) {
        auto p = propose(queue, cfg.proposal, ctx, tick, proposer);
        if (!p) break;
        ++attempts;
        ++summary.proposals;
        const bool ok = gate(*p);
        if (log) {
          json line = {{"event", "proposal"}, {"tick", tick}, {"attempt", attempts}};
          line.update(proposal_json(*p));
          line["decision"] = ok ? "accept" : "reject";
          *log << line.dump() << '\n';
        }
        if (ok) {
          ++summary.accepted;
          chosen = std::move(p);
          break;
        }
        ++summary.rejected;
        if (!best || p->imbalance < best->imbalance) best = std::move(p);
      }
      if (!chosen) {
        if (!best) break;  // not enough players: wait for arrivals
        chosen = std::move(best);
        fallback = true;
        ++summary.fallbacks;
      }

      LaunchedMatch launch;
      launch.record = simulate_match(population, chosen->lineups[0], chosen->lineups[1], outcomes);
      launch.record.match_id = summary.launched;
      launch.record.day_index =
          cfg.first_day + tick / static_cast<std::int64_t>(cfg.ticks_per_day);
      launch.attempts = attempts;
      launch.fallback = fallback;
      launch.tick = tick;

      std::vector<std::uint64_t> ids;
      for (const auto& t : chosen->teams) ids.insert(ids.end(), t.player_ids.begin(), t.player_ids.end());
      for (const auto& e : queue.entries()) {
        if (std::find(ids.begin(), ids.end(), e.player_id) != ids.end()) {
          wait_total += static_cast<double>(tick - e.enqueue_tick);
          ++waited_players;
        }
      }
      queue.remove(ids);
      for (auto id : ids) queued[id] = false;
      if (cfg.update_profiles) store.apply(launch.record);

      ++summary.launched;
      abs_diff_total += std::fabs(static_cast<double>(launch.record.score_diff));
      launch.proposal = std::move(*chosen);
      if (log) {
        json line = {{"event", "launch"},
                     {"tick", tick},
                     {"match_id", launch.record.match_id},
                     {"attempts", attempts},
                     {"fallback", fallback},
                     {"predicted", launch.proposal.predicted},
                     {"final_score",
                      {launch.record.teams[0].final_score, launch.record.teams[1].final_score}},
                     {"score_diff", launch.record.score_diff}};
        *log << line.dump() << '\n';
      }
      if (on_launch) on_launch(launch);
    }
    summary.ticks = static_cast<std::size_t>(tick) + 1;
  }

  if (summary.launched > 0) {
    summary.mean_abs_score_diff = abs_diff_total / static_cast<double>(summary.launched);
  }
  if (waited_players > 0) summary.mean_wait_ticks = wait_total / static_cast<double>(waited_players);
  return summary;
}

}  // namespace cbal
