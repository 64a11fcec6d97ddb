#include "cbal/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cbal/error.hpp"

namespace cbal {

namespace {

constexpr double kAssistProbability = 0.7;
constexpr double kDropoutActivity = 0.3;

double strength_multiplier(double penalty, std::size_t count) {
  return std::pow(penalty, static_cast<double>(count));
}

void check_lineup(const Population& pop, const Lineup& lineup) {
  const auto& cfg = pop.config;
  if (lineup.humans.size() > cfg.team_size) {
    throw InvariantError("lineup has " + std::to_string(lineup.humans.size()) +
                         " humans for team size " + std::to_string(cfg.team_size));
  }
  for (const auto& slot : lineup.humans) {
    if (slot.player_id >= pop.players.size()) {
      throw InvariantError("unknown player id " + std::to_string(slot.player_id));
    }
    if (slot.role >= cfg.roles.size()) {
      throw InvariantError("role index " + std::to_string(slot.role) + " out of range");
    }
  }
}

struct Member {
  double skill = 0.0;
  double aggressiveness = 0.0;
  std::size_t role = 0;
  bool dropout = false;
  bool bot = false;
};

void draw_actions(const PopulationConfig& cfg, const std::vector<Member>& members,
                  std::uint32_t score, Rng& rng, std::vector<std::vector<std::uint32_t>>& out) {
  const std::size_t n = members.size();
  const std::size_t num_actions = cfg.actions.size();
  out.assign(n, std::vector<std::uint32_t>(num_actions, 0));

  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = members[i];
    const double activity = m.dropout ? kDropoutActivity : 1.0;
    const double style = m.bot ? 0.5 : 0.5 + m.aggressiveness;
    weights[i] = std::max(m.skill, 1.0) / cfg.skill_mean * style * activity;
  }

  const auto find_action = [&](std::string_view name) -> std::ptrdiff_t {
    auto it = std::find(cfg.actions.begin(), cfg.actions.end(), name);
    return it == cfg.actions.end() ? -1 : it - cfg.actions.begin();
  };
  const std::ptrdiff_t goal = find_action("goal");
  const std::ptrdiff_t assist = find_action("assist");

  std::vector<double> others(n);
  for (std::uint32_t g = 0; g < score; ++g) {
    const std::size_t scorer = rng.categorical(weights);
    if (goal >= 0) ++out[scorer][goal];
    if (n > 1 && rng.bernoulli(kAssistProbability)) {
      others = weights;
      others[scorer] = 0.0;
      const std::size_t helper = rng.categorical(others);
      if (assist >= 0) ++out[helper][assist];
    }
  }

  for (std::size_t a = 0; a < num_actions; ++a) {
    if (static_cast<std::ptrdiff_t>(a) == goal || static_cast<std::ptrdiff_t>(a) == assist) {
      continue;
    }
    const std::string& name = cfg.actions[a];
    for (std::size_t i = 0; i < n; ++i) {
      const auto& m = members[i];
      const double activity = m.dropout ? kDropoutActivity : 1.0;
      double rate = 0.5 + m.aggressiveness;
      if (name == "hit") {
        rate = 0.2 + 2.0 * m.aggressiveness;
      } else if (name == "takeaway") {
        rate = 0.8 * std::max(m.skill, 1.0) / cfg.skill_mean * (m.role == 0 ? 1.5 : 1.0);
      }
      out[i][a] = rng.poisson(rate * activity);
    }
  }
}

/// Assigns roles to the humans of one team. Slot s carries role s % R.
Lineup assign_roles(const Population& pop, std::span<const std::uint64_t> ids, Rng& rng) {
  const auto& cfg = pop.config;
  std::vector<std::size_t> free_roles(cfg.team_size);
  for (std::size_t s = 0; s < cfg.team_size; ++s) free_roles[s] = s % cfg.roles.size();
  Lineup lineup;
  for (std::uint64_t id : ids) {
    const auto& player = pop.at(id);
    std::size_t pick = 0;
    if (rng.bernoulli(cfg.role_preference)) {
      for (std::size_t k = 1; k < free_roles.size(); ++k) {
        if (player.role_skill[free_roles[k]] > player.role_skill[free_roles[pick]]) pick = k;
      }
    } else {
      pick = rng.uniform_index(free_roles.size());
    }
    lineup.humans.push_back({id, free_roles[pick]});
    free_roles.erase(free_roles.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return lineup;
}

std::size_t draw_humans(const PopulationConfig& cfg, Rng& rng) {
  std::size_t bots = 0;
  for (std::size_t s = 0; s < cfg.team_size; ++s) {
    if (rng.bernoulli(cfg.bot_slot_prob)) ++bots;
  }
  bots = std::min({bots, cfg.max_bots_per_team, cfg.team_size - 1});
  return cfg.team_size - bots;
}

}  // namespace

void PopulationConfig::validate() const {
  if (num_players == 0) throw ConfigError("num_players must be positive");
  if (roles.empty()) throw ConfigError("roles must be nonempty");
  if (actions.empty()) throw ConfigError("actions must be nonempty");
  if (team_size != 3 && team_size != 6) throw ConfigError("team_size must be 3 or 6");
  if (num_players < 2 * team_size) {
    throw ConfigError("num_players must cover two full teams");
  }
  if (!(skill_scale > 0.0)) throw ConfigError("skill_scale must be positive");
  if (!(dropout_rate_min >= 0.0 && dropout_rate_max <= 1.0 &&
        dropout_rate_min <= dropout_rate_max)) {
    throw ConfigError("dropout_rate_range must be an interval inside [0,1]");
  }
  if (!(base_rate > 0.0)) throw ConfigError("base_rate must be positive");
  if (!(bot_slot_prob >= 0.0 && bot_slot_prob < 1.0)) {
    throw ConfigError("bot_slot_prob must lie in [0,1)");
  }
  if (!(role_preference >= 0.0 && role_preference <= 1.0)) {
    throw ConfigError("role_preference must lie in [0,1]");
  }
  if (!(dropout_skew > 0.0)) throw ConfigError("dropout_skew must be positive");
  if (!(dropout_penalty > 0.0 && bot_penalty > 0.0)) {
    throw ConfigError("strength penalties must be positive");
  }
}

std::string PopulationConfig::mode_name() const {
  return std::to_string(team_size) + "v" + std::to_string(team_size);
}

double LatentPlayer::mean_skill() const {
  return std::accumulate(role_skill.begin(), role_skill.end(), 0.0) /
         static_cast<double>(role_skill.size());
}

std::size_t LatentPlayer::best_role() const {
  return static_cast<std::size_t>(
      std::max_element(role_skill.begin(), role_skill.end()) - role_skill.begin());
}

const LatentPlayer& Population::at(std::uint64_t id) const {
  if (id >= players.size()) throw LookupError("unknown player id " + std::to_string(id));
  return players[id];
}

Population generate_population(const PopulationConfig& cfg) {
  cfg.validate();
  Population pop;
  pop.config = cfg;
  pop.players.reserve(cfg.num_players);
  Rng rng(derive_seed(cfg.seed, "population"));
  std::vector<double> means;
  means.reserve(cfg.num_players);
  for (std::size_t i = 0; i < cfg.num_players; ++i) {
    LatentPlayer p;
    p.id = i;
    const double base = rng.normal(cfg.skill_mean, cfg.skill_sd);
    p.role_skill.resize(cfg.roles.size());
    for (auto& s : p.role_skill) s = base + rng.normal(0.0, cfg.role_skill_sd);
    p.aggressiveness = rng.uniform();
    const double u = rng.uniform();
    p.dropout_propensity =
        cfg.dropout_rate_min +
        (cfg.dropout_rate_max - cfg.dropout_rate_min) * std::pow(u, cfg.dropout_skew);
    p.skill_rating = p.mean_skill() + rng.normal(0.0, cfg.rating_noise_sd);
    means.push_back(p.mean_skill());
    pop.players.push_back(std::move(p));
  }
  std::sort(means.begin(), means.end());
  pop.bot_skill = means[static_cast<std::size_t>(0.05 * static_cast<double>(means.size() - 1))];
  return pop;
}

MatchRecord simulate_match(const Population& pop, const Lineup& team1, const Lineup& team2,
                           Rng& rng) {
  const auto& cfg = pop.config;
  check_lineup(pop, team1);
  check_lineup(pop, team2);
  for (const auto& a : team1.humans) {
    for (const auto& b : team2.humans) {
      if (a.player_id == b.player_id) {
        throw InvariantError("player " + std::to_string(a.player_id) + " on both teams");
      }
    }
  }

  const Lineup* lineups[2] = {&team1, &team2};
  std::vector<Member> members[2];
  double strength[2];
  for (int t = 0; t < 2; ++t) {
    std::size_t drops = 0;
    double sum = 0.0;
    for (const auto& slot : lineups[t]->humans) {
      const auto& p = pop.at(slot.player_id);
      Member m;
      m.skill = p.role_skill[slot.role];
      m.aggressiveness = p.aggressiveness;
      m.role = slot.role;
      m.dropout = rng.bernoulli(p.dropout_propensity);
      drops += m.dropout ? 1 : 0;
      sum += m.skill;
      members[t].push_back(m);
    }
    const std::size_t bots = cfg.team_size - lineups[t]->humans.size();
    for (std::size_t b = 0; b < bots; ++b) {
      Member m;
      m.skill = pop.bot_skill;
      m.bot = true;
      sum += m.skill;
      members[t].push_back(m);
    }
    strength[t] = sum * strength_multiplier(cfg.dropout_penalty, drops) *
                  strength_multiplier(cfg.bot_penalty, bots);
  }

  const double edge = cfg.beta * (strength[0] - strength[1]) / cfg.skill_scale;
  const double rate1 = cfg.base_rate * std::exp(edge + cfg.home_advantage);
  const double rate2 = cfg.base_rate * std::exp(-edge);

  MatchRecord rec;
  rec.team_size = cfg.team_size;
  rec.teams[0].final_score = rng.poisson(rate1);
  rec.teams[1].final_score = rng.poisson(rate2);
  rec.score_diff = static_cast<std::int64_t>(rec.teams[0].final_score) -
                   static_cast<std::int64_t>(rec.teams[1].final_score);

  std::vector<std::vector<std::uint32_t>> actions;
  for (int t = 0; t < 2; ++t) {
    draw_actions(cfg, members[t], rec.teams[t].final_score, rng, actions);
    auto& team = rec.teams[t];
    team.human_count = static_cast<std::uint32_t>(lineups[t]->humans.size());
    for (std::size_t i = 0; i < lineups[t]->humans.size(); ++i) {
      const auto& slot = lineups[t]->humans[i];
      RosterEntry e;
      e.player_id = slot.player_id;
      e.role = slot.role;
      e.skill_rating = pop.at(slot.player_id).skill_rating;
      e.action_counts = std::move(actions[i]);
      e.dropout = members[t][i].dropout;
      team.roster.push_back(std::move(e));
    }
  }
  return rec;
}

Population run_season(const PopulationConfig& cfg,
                      const std::function<void(MatchRecord&&)>& sink) {
  Population pop = generate_population(cfg);
  Rng rng(derive_seed(cfg.seed, "season"));
  const std::size_t n = pop.players.size();
  std::vector<std::uint64_t> order(n);

  struct Plan {
    std::size_t start;
    std::size_t humans1;
    std::size_t humans2;
  };

  std::uint64_t match_id = 0;
  for (std::size_t day = 0; day < cfg.days; ++day) {
    std::size_t remaining = cfg.matches_per_day;
    while (remaining > 0) {
      std::iota(order.begin(), order.end(), std::uint64_t{0});
      rng.shuffle(std::span(order));

      std::vector<Plan> plans;
      std::size_t used = 0;
      while (remaining > plans.size()) {
        const std::size_t h1 = draw_humans(cfg, rng);
        const std::size_t h2 = draw_humans(cfg, rng);
        if (used + h1 + h2 > n) break;
        plans.push_back({used, h1, h2});
        used += h1 + h2;
      }
      // Naive rating-proximity grouping: consecutive players by displayed rating.
      std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(used),
                [&](std::uint64_t a, std::uint64_t b) {
                  const double ra = pop.players[a].skill_rating;
                  const double rb = pop.players[b].skill_rating;
                  return ra != rb ? ra < rb : a < b;
                });
      for (const auto& plan : plans) {
        std::span<std::uint64_t> group(order.data() + plan.start, plan.humans1 + plan.humans2);
        rng.shuffle(group);
        Lineup a = assign_roles(pop, group.subspan(0, plan.humans1), rng);
        Lineup b = assign_roles(pop, group.subspan(plan.humans1), rng);
        MatchRecord rec = simulate_match(pop, a, b, rng);
        rec.match_id = match_id++;
        rec.day_index = static_cast<std::int64_t>(day);
        sink(std::move(rec));
      }
      remaining -= plans.size();
    }
  }
  return pop;
}

Season run_season(const PopulationConfig& cfg) {
  Season season;
  season.matches.reserve(cfg.days * cfg.matches_per_day);
  season.population =
      run_season(cfg, [&](MatchRecord&& rec) { season.matches.push_back(std::move(rec)); });
  return season;
}

std::string MatchRecord::mode() const {
  return std::to_string(team_size) + "v" + std::to_string(team_size);
}

int MatchRecord::team_of(std::uint64_t player_id) const {
  for (int t = 0; t < 2; ++t) {
    for (const auto& e : teams[t].roster) {
      if (e.player_id == player_id) return t;
    }
  }
  return -1;
}

const RosterEntry* MatchRecord::find(std::uint64_t player_id) const {
  for (const auto& team : teams) {
    for (const auto& e : team.roster) {
      if (e.player_id == player_id) return &e;
    }
  }
  return nullptr;
}

void MatchRecord::check_invariants(std::size_t num_roles, std::size_t num_actions) const {
  if (day_index < 0) throw InvariantError("negative day_index");
  if (score_diff != static_cast<std::int64_t>(teams[0].final_score) -
                        static_cast<std::int64_t>(teams[1].final_score)) {
    throw InvariantError("score_diff does not equal score1 - score2");
  }
  for (const auto& team : teams) {
    if (team.human_count > team_size || team.human_count != team.roster.size()) {
      throw InvariantError("human_count inconsistent with roster");
    }
    for (const auto& e : team.roster) {
      if (e.role >= num_roles) throw InvariantError("roster role outside configured roles");
      if (e.action_counts.size() != num_actions) {
        throw InvariantError("action count vector has wrong length");
      }
    }
  }
}

bool operator==(const RosterEntry& a, const RosterEntry& b) {
  return a.player_id == b.player_id && a.role == b.role && a.skill_rating == b.skill_rating &&
         a.action_counts == b.action_counts && a.dropout == b.dropout;
}

bool operator==(const TeamResult& a, const TeamResult& b) {
  return a.roster == b.roster && a.human_count == b.human_count &&
         a.final_score == b.final_score;
}

bool operator==(const MatchRecord& a, const MatchRecord& b) {
  return a.match_id == b.match_id && a.day_index == b.day_index &&
         a.team_size == b.team_size && a.teams[0] == b.teams[0] && a.teams[1] == b.teams[1] &&
         a.score_diff == b.score_diff;
}

}  // namespace cbal
