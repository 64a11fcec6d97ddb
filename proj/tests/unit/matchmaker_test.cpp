#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "cbal/error.hpp"
#include "cbal/harness.hpp"
#include "cbal/matchmaker.hpp"

namespace {

using cbal::MatchQueue;
using cbal::QueueEntry;

struct World {
  cbal::Population pop;
  cbal::FeatureConfig features;
  cbal::ProfileStore store{3, 4};
  std::shared_ptr<const cbal::FeatureSchema> schema;
  cbal::Dataset data;

  World() {
    cbal::PopulationConfig pc;
    pc.num_players = 300;
    pc.days = 10;
    pc.matches_per_day = 100;
    auto season = cbal::run_season(pc);
    pop = season.population;
    for (const auto& rec : season.matches) store.apply(rec);
    schema = features.schema();
    data = cbal::build_dataset(season.matches, features);
  }

  cbal::FeatureContext ctx() const { return {&store, &features, schema}; }

  cbal::TrainedModel linear() const {
    auto rows = data.rows_for_days(0, 9);
    cbal::FitOptions opts;
    opts.schema_hash = schema->hash();
    std::vector<double> y;
    for (auto r : rows) y.push_back(data.score_diff[r]);
    return cbal::fit_baseline(cbal::ModelKind::Linear, data.x.select_rows(rows), y, opts);
  }
};

const World& world() {
  static const World w;
  return w;
}

MatchQueue queue_of(std::size_t n, std::uint64_t first_id = 0) {
  MatchQueue q;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = first_id + i;
    q.push({id, world().pop.players[id].skill_rating, static_cast<std::int64_t>(i), "3v3"});
  }
  return q;
}

cbal::TrainedModel constant_model(double value) {
  cbal::TrainedModel m;
  m.kind = cbal::ModelKind::Dummy;
  m.params = cbal::ConstantParams{value};
  m.input_dim = world().schema->size();
  m.schema_hash = world().schema->hash();
  return m;
}

TEST(MatchmakerTest, QueueRejectsBadPushes) {
  MatchQueue q;
  q.push({1, 1500, 5});
  EXPECT_THROW(q.push({2, 1500, 4}), cbal::OrderingError);
  EXPECT_THROW(q.push({1, 1500, 6}), cbal::InvariantError);
  q.push({2, 1400, 5});
  EXPECT_EQ(q.size(), 2u);
  std::vector<std::uint64_t> ids{1};
  q.remove(ids);
  EXPECT_FALSE(q.contains(1));
  EXPECT_TRUE(q.contains(2));
}

TEST(MatchmakerTest, QueueOfSixFillsBothRosters) {
  auto q = queue_of(6);
  cbal::Rng rng(1);
  auto p = cbal::propose(q, {}, world().ctx(), 6, rng);
  ASSERT_TRUE(p.has_value());
  std::set<std::uint64_t> seen;
  for (const auto& t : p->teams) {
    EXPECT_EQ(t.player_ids.size(), 3u);
    seen.insert(t.player_ids.begin(), t.player_ids.end());
  }
  EXPECT_EQ(seen, (std::set<std::uint64_t>{0, 1, 2, 3, 4, 5}));
  // Roles within a team are distinct in 3v3.
  for (const auto& l : p->lineups) {
    std::set<std::size_t> roles;
    for (const auto& s : l.humans) roles.insert(s.role);
    EXPECT_EQ(roles.size(), 3u);
  }
  EXPECT_EQ(p->features.values.size(), 124u);
}

TEST(MatchmakerTest, QueueOfFourLeavesTwoBotSlots) {
  auto q = queue_of(4);
  const auto hc = world().schema->headcount_offset();
  std::set<std::pair<int, int>> shapes;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    cbal::Rng rng(seed);
    auto p = cbal::propose(q, {}, world().ctx(), 4, rng);
    ASSERT_TRUE(p.has_value());
    const int a = static_cast<int>(p->features.values[hc]);
    const int b = static_cast<int>(p->features.values[hc + 1]);
    EXPECT_EQ(a + b, 4);
    shapes.insert({a, b});
  }
  EXPECT_EQ(shapes, (std::set<std::pair<int, int>>{{2, 2}, {3, 1}}));
}

TEST(MatchmakerTest, TooFewPlayersMeansWait) {
  auto q = queue_of(1);
  cbal::Rng rng(1);
  EXPECT_FALSE(cbal::propose(q, {}, world().ctx(), 1, rng).has_value());
}

TEST(MatchmakerTest, SameSeedSameProposal) {
  auto q = queue_of(40);
  cbal::Rng a(7), b(7);
  auto p = cbal::propose(q, {}, world().ctx(), 40, a);
  auto r = cbal::propose(q, {}, world().ctx(), 40, b);
  ASSERT_TRUE(p && r);
  EXPECT_EQ(p->teams[0].player_ids, r->teams[0].player_ids);
  EXPECT_EQ(p->teams[1].player_ids, r->teams[1].player_ids);
  EXPECT_EQ(p->features.values, r->features.values);
}

TEST(MatchmakerTest, ProposalIncludesAnchorAndNearbyRatings) {
  auto q = queue_of(60);
  const auto& anchor = q.entries().front();
  std::vector<double> gaps;
  for (const auto& e : q.entries()) gaps.push_back(std::fabs(e.skill_rating - anchor.skill_rating));
  std::sort(gaps.begin(), gaps.end());
  const double limit = gaps[11];
  cbal::Rng rng(3);
  auto p = cbal::propose(q, {}, world().ctx(), 0, rng);
  ASSERT_TRUE(p.has_value());
  bool has_anchor = false;
  for (const auto& t : p->teams) {
    for (std::size_t i = 0; i < t.player_ids.size(); ++i) {
      has_anchor |= t.player_ids[i] == anchor.player_id;
      EXPECT_LE(std::fabs(t.skill_ratings[i] - anchor.skill_rating), limit);
    }
  }
  EXPECT_TRUE(has_anchor);
}

TEST(MatchmakerTest, GateThresholdExamples) {
  auto q = queue_of(6);
  cbal::Rng rng(1);
  auto p = cbal::propose(q, {}, world().ctx(), 6, rng);
  cbal::BalanceThresholds t;
  EXPECT_TRUE(cbal::quality_gate(constant_model(0.4), *p, t));
  EXPECT_EQ(p->predicted, 0.4);
  EXPECT_FALSE(cbal::quality_gate(constant_model(5.1), *p, t));
  EXPECT_NEAR(p->imbalance, 5.1, 1e-12);
}

TEST(MatchmakerTest, GateRejectsForeignSchema) {
  auto q = queue_of(6);
  cbal::Rng rng(1);
  auto p = cbal::propose(q, {}, world().ctx(), 6, rng);
  auto m = constant_model(0.0);
  m.schema_hash ^= 0xFF;
  EXPECT_THROW(cbal::quality_gate(m, *p, {}), cbal::SchemaError);
}

// Gating on the true outcome separates balanced from unbalanced launches.
TEST(MatchmakerTest, OutcomeOracleGateSeparatesImbalance) {
  const auto& w = world();
  auto q = queue_of(120);
  cbal::Rng proposer(11), outcomes(12);
  double acc = 0, rej = 0;
  int n_acc = 0, n_rej = 0;
  for (int i = 0; i < 10000; ++i) {
    auto p = cbal::propose(q, {}, w.ctx(), 200, proposer);
    auto rec = cbal::simulate_match(w.pop, p->lineups[0], p->lineups[1], outcomes);
    const double d = std::fabs(static_cast<double>(rec.score_diff));
    if (cbal::classify_balance(static_cast<double>(rec.score_diff), 3.0)) {
      acc += d;
      ++n_acc;
    } else {
      rej += d;
      ++n_rej;
    }
  }
  ASSERT_GT(n_acc, 0);
  ASSERT_GT(n_rej, 0);
  EXPECT_LT(acc / n_acc, rej / n_rej);
}

TEST(MatchmakerTest, GateMonotoneInTheta) {
  const auto& w = world();
  auto model = w.linear();
  auto q = queue_of(120);
  cbal::Rng rng(5);
  std::vector<cbal::MatchProposal> proposals;
  for (int i = 0; i < 500; ++i) proposals.push_back(*cbal::propose(q, {}, w.ctx(), 200, rng));
  std::size_t prev = proposals.size() + 1;
  for (double theta : {6.0, 3.0, 2.0, 1.0, 0.5, 0.1}) {
    std::size_t accepted = 0;
    for (auto p : proposals) accepted += cbal::quality_gate(model, p, {theta, 0.3});
    EXPECT_LE(accepted, prev) << "theta " << theta;
    prev = accepted;
  }
}

cbal::SessionConfig short_session() {
  cbal::SessionConfig cfg;
  cfg.matches = 300;
  cfg.first_day = 10;
  cfg.update_profiles = false;
  return cfg;
}

TEST(MatchmakerTest, AcceptAllLaunchesFirstProposal) {
  const auto& w = world();
  cbal::ProfileStore store = w.store;
  std::size_t launches = 0;
  auto summary = cbal::run_matchmaking(w.pop, store, w.features, cbal::accept_all_gate(),
                                       short_session(), nullptr, [&](const cbal::LaunchedMatch& m) {
                                         EXPECT_EQ(m.attempts, 1u);
                                         EXPECT_FALSE(m.fallback);
                                         ++launches;
                                       });
  EXPECT_EQ(summary.launched, 300u);
  EXPECT_EQ(launches, 300u);
  EXPECT_EQ(summary.proposals, 300u);
  EXPECT_EQ(summary.fallbacks, 0u);
}

TEST(MatchmakerTest, RejectAllFallsBackAfterMaxAttempts) {
  const auto& w = world();
  cbal::ProfileStore store = w.store;
  auto cfg = short_session();
  std::size_t full = 0;
  auto summary = cbal::run_matchmaking(w.pop, store, w.features, cbal::reject_all_gate(), cfg,
                                       nullptr, [&](const cbal::LaunchedMatch& m) {
                                         EXPECT_TRUE(m.fallback);
                                         full += m.attempts == cfg.max_attempts;
                                       });
  EXPECT_EQ(summary.launched, 300u);
  EXPECT_EQ(summary.fallbacks, 300u);
  EXPECT_EQ(summary.accepted, 0u);
  EXPECT_GT(full, 290u);
}

TEST(MatchmakerTest, FallbackPicksSmallestImbalance) {
  const auto& w = world();
  cbal::ProfileStore store = w.store;
  auto model = std::make_shared<const cbal::TrainedModel>(w.linear());
  auto cfg = short_session();
  cbal::BalanceThresholds strict{0.01, 0.3};
  std::ostringstream log;
  cbal::run_matchmaking(w.pop, store, w.features, cbal::model_gate(model, strict), cfg, &log,
                        {});
  // Replay the log: each fallback launch carries the smallest |predicted| of its attempts.
  std::istringstream in(log.str());
  std::string line;
  double best = 1e300;
  std::size_t checked = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (j["event"] == "proposal") {
      if (j["attempt"] == 1) best = 1e300;
      best = std::min(best, std::fabs(j["predicted"].get<double>()));
    } else if (j["fallback"].get<bool>()) {
      EXPECT_EQ(std::fabs(j["predicted"].get<double>()), best);
      ++checked;
    }
  }
  EXPECT_GT(checked, 0u);
}

TEST(MatchmakerTest, NoPlayerInTwoMatchesAtOnce) {
  const auto& w = world();
  cbal::ProfileStore store = w.store;
  auto cfg = short_session();
  cfg.launches_per_tick = 3;
  cfg.arrivals_per_tick = 15;
  std::int64_t tick = -1;
  std::set<std::uint64_t> busy;
  cbal::run_matchmaking(w.pop, store, w.features, cbal::accept_all_gate(), cfg, nullptr,
                        [&](const cbal::LaunchedMatch& m) {
                          if (m.tick != tick) {
                            busy.clear();
                            tick = m.tick;
                          }
                          for (const auto& t : m.record.teams) {
                            for (const auto& e : t.roster) {
                              EXPECT_TRUE(busy.insert(e.player_id).second) << e.player_id;
                            }
                          }
                        });
}

TEST(MatchmakerTest, SessionIsDeterministicAndLogged) {
  const auto& w = world();
  auto model = std::make_shared<const cbal::TrainedModel>(w.linear());
  auto run = [&] {
    cbal::ProfileStore store = w.store;
    std::ostringstream log;
    auto cfg = short_session();
    cfg.update_profiles = true;
    auto s = cbal::run_matchmaking(w.pop, store, w.features, cbal::model_gate(model, {}), cfg, &log);
    return std::make_pair(s.mean_abs_score_diff, log.str());
  };
  auto a = run();
  auto b = run();
  EXPECT_EQ(a, b);
  std::istringstream in(a.second);
  std::string line;
  std::size_t launches = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    launches += j["event"] == "launch";
  }
  EXPECT_EQ(launches, 300u);
}

TEST(MatchmakerTest, SessionValidatesConfig) {
  const auto& w = world();
  cbal::ProfileStore store = w.store;
  auto cfg = short_session();
  cfg.max_attempts = 0;
  EXPECT_THROW(cbal::run_matchmaking(w.pop, store, w.features, cbal::accept_all_gate(), cfg),
               cbal::ParameterError);
  cfg = short_session();
  cfg.first_day = 2;
  EXPECT_THROW(cbal::run_matchmaking(w.pop, store, w.features, cbal::accept_all_gate(), cfg),
               cbal::ParameterError);
}

}  // namespace
