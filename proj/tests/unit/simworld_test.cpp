#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "cbal/error.hpp"
#include "cbal/simworld.hpp"

namespace {

using cbal::Lineup;
using cbal::Population;
using cbal::PopulationConfig;

// Six players with identical role skills and no dropouts.
Population identical_pool(double beta = 1.0) {
  PopulationConfig cfg;
  cfg.num_players = 6;
  cfg.beta = beta;
  cfg.dropout_rate_max = 0.0;
  Population pop = cbal::generate_population(cfg);
  for (auto& p : pop.players) {
    p.role_skill.assign(3, 1500.0);
    p.dropout_propensity = 0.0;
  }
  return pop;
}

Lineup lineup(std::vector<std::uint64_t> ids) {
  Lineup l;
  for (std::size_t i = 0; i < ids.size(); ++i) l.humans.push_back({ids[i], i % 3});
  return l;
}

TEST(SimworldTest, SameConfigSamePopulation) {
  PopulationConfig cfg;
  cfg.num_players = 500;
  auto a = cbal::generate_population(cfg);
  auto b = cbal::generate_population(cfg);
  ASSERT_EQ(a.players.size(), b.players.size());
  for (std::size_t i = 0; i < a.players.size(); ++i) {
    EXPECT_EQ(a.players[i].role_skill, b.players[i].role_skill);
    EXPECT_EQ(a.players[i].skill_rating, b.players[i].skill_rating);
    EXPECT_EQ(a.players[i].dropout_propensity, b.players[i].dropout_propensity);
  }
  EXPECT_EQ(a.bot_skill, b.bot_skill);
}

TEST(SimworldTest, InvalidConfigurationsThrow) {
  PopulationConfig cfg;
  cfg.num_players = 0;
  EXPECT_THROW(cbal::generate_population(cfg), cbal::ConfigError);
  cfg = {};
  cfg.team_size = 4;
  EXPECT_THROW(cfg.validate(), cbal::ConfigError);
  cfg = {};
  cfg.roles.clear();
  EXPECT_THROW(cfg.validate(), cbal::ConfigError);
  cfg = {};
  cfg.dropout_rate_min = 0.5;
  cfg.dropout_rate_max = 0.2;
  EXPECT_THROW(cfg.validate(), cbal::ConfigError);
}

// The displayed rating is latent mean plus zero-mean noise.
TEST(SimworldTest, DisplayedRatingsAreUnbiased) {
  PopulationConfig cfg;
  cfg.num_players = 10000;
  auto pop = cbal::generate_population(cfg);
  double diff = 0.0;
  for (const auto& p : pop.players) diff += p.skill_rating - p.mean_skill();
  diff /= static_cast<double>(pop.players.size());
  EXPECT_LT(std::fabs(diff), 3 * cfg.rating_noise_sd / std::sqrt(10000.0));
}

TEST(SimworldTest, BotSkillIsFifthPercentile) {
  PopulationConfig cfg;
  cfg.num_players = 2001;
  auto pop = cbal::generate_population(cfg);
  std::size_t below = 0;
  for (const auto& p : pop.players) below += p.mean_skill() < pop.bot_skill ? 1 : 0;
  EXPECT_EQ(below, 100u);
}

TEST(SimworldTest, IdenticalTeamsHaveZeroMeanDifference) {
  auto pop = identical_pool();
  cbal::Rng rng(17);
  auto a = lineup({0, 1, 2});
  auto b = lineup({3, 4, 5});
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += cbal::simulate_match(pop, a, b, rng).score_diff;
  EXPECT_LT(std::fabs(sum / n), 0.05);
}

TEST(SimworldTest, HighSkillHumansBeatAllBots) {
  auto pop = identical_pool();
  for (std::size_t i = 0; i < 3; ++i) pop.players[i].role_skill.assign(3, 2200.0);
  cbal::Rng rng(5);
  auto humans = lineup({0, 1, 2});
  Lineup bots;
  int wins = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) wins += cbal::simulate_match(pop, humans, bots, rng).score_diff > 0;
  EXPECT_GT(wins / static_cast<double>(n), 0.9);
}

TEST(SimworldTest, FixedSeedGivesIdenticalRecord) {
  PopulationConfig cfg;
  cfg.num_players = 50;
  auto pop = cbal::generate_population(cfg);
  auto a = lineup({1, 2, 3});
  auto b = lineup({10, 11});
  cbal::Rng r1(99), r2(99);
  EXPECT_EQ(cbal::simulate_match(pop, a, b, r1), cbal::simulate_match(pop, a, b, r2));
}

TEST(SimworldTest, SimulatedRecordIsConsistent) {
  PopulationConfig cfg;
  cfg.num_players = 50;
  auto pop = cbal::generate_population(cfg);
  cbal::Rng rng(1);
  auto rec = cbal::simulate_match(pop, lineup({1, 2, 3}), lineup({4}), rng);
  EXPECT_NO_THROW(rec.check_invariants(3, 4));
  EXPECT_EQ(rec.teams[0].human_count, 3u);
  EXPECT_EQ(rec.teams[1].human_count, 1u);
  EXPECT_EQ(rec.team_of(4), 1);
  EXPECT_EQ(rec.team_of(7), -1);
  EXPECT_EQ(rec.mode(), "3v3");
}

TEST(SimworldTest, BadLineupsThrow) {
  PopulationConfig cfg;
  cfg.num_players = 50;
  auto pop = cbal::generate_population(cfg);
  cbal::Rng rng(1);
  Lineup bad_role;
  bad_role.humans.push_back({1, 7});
  EXPECT_THROW(cbal::simulate_match(pop, bad_role, lineup({2}), rng), cbal::InvariantError);
  EXPECT_THROW(cbal::simulate_match(pop, lineup({1, 2}), lineup({2, 3}), rng),
               cbal::InvariantError);
  EXPECT_THROW(cbal::simulate_match(pop, lineup({1, 2, 3, 4}), lineup({5}), rng),
               cbal::InvariantError);
}

TEST(SimworldTest, SwappingLabelsNegatesDifferenceInDistribution) {
  PopulationConfig cfg;
  cfg.num_players = 50;
  auto pop = cbal::generate_population(cfg);
  auto a = lineup({1, 2, 3});
  auto b = lineup({4, 5});
  const int n = 40000;
  std::vector<int> forward, mirrored;
  for (int i = 0; i < n; ++i) {
    cbal::Rng r1(1000 + i), r2(1000 + i);
    forward.push_back(static_cast<int>(cbal::simulate_match(pop, a, b, r1).score_diff));
    mirrored.push_back(-static_cast<int>(cbal::simulate_match(pop, b, a, r2).score_diff));
  }
  auto mean = [](const std::vector<int>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  EXPECT_NEAR(mean(forward), mean(mirrored), 0.05);
  for (int k = -3; k <= 3; ++k) {
    const double pf = std::count(forward.begin(), forward.end(), k) / double(n);
    const double pm = std::count(mirrored.begin(), mirrored.end(), k) / double(n);
    EXPECT_NEAR(pf, pm, 0.012) << "k=" << k;
  }
}

TEST(SimworldTest, LargerBetaWidensScoreGap) {
  double prev = -1.0;
  for (double beta : {0.5, 1.0, 2.0}) {
    auto pop = identical_pool(beta);
    for (std::size_t i = 0; i < 3; ++i) pop.players[i].role_skill.assign(3, 1800.0);
    cbal::Rng rng(3);
    double sum = 0.0;
    const int n = 30000;
    for (int i = 0; i < n; ++i) {
      sum += std::abs(cbal::simulate_match(pop, lineup({0, 1, 2}), lineup({3, 4, 5}), rng)
                          .score_diff);
    }
    EXPECT_GT(sum / n, prev) << "beta " << beta;
    prev = sum / n;
  }
}

TEST(SimworldTest, SeasonCountsAndOrder) {
  PopulationConfig cfg;
  cfg.num_players = 400;
  cfg.days = 10;
  cfg.matches_per_day = 100;
  auto season = cbal::run_season(cfg);
  ASSERT_EQ(season.matches.size(), 1000u);
  for (std::size_t i = 0; i < season.matches.size(); ++i) {
    const auto& m = season.matches[i];
    EXPECT_GE(m.day_index, 0);
    EXPECT_LE(m.day_index, 9);
    EXPECT_EQ(m.match_id, i);
    if (i > 0) EXPECT_LE(season.matches[i - 1].day_index, m.day_index);
    EXPECT_NO_THROW(m.check_invariants(3, 4));
    EXPECT_GE(m.teams[0].human_count, 2u);
  }
}

TEST(SimworldTest, SeasonIsDeterministic) {
  PopulationConfig cfg;
  cfg.num_players = 300;
  cfg.days = 3;
  cfg.matches_per_day = 80;
  EXPECT_EQ(cbal::run_season(cfg).matches, cbal::run_season(cfg).matches);
  auto other = cfg;
  other.seed = 2;
  EXPECT_NE(cbal::run_season(cfg).matches, cbal::run_season(other).matches);
}

// Planted effect: rosters with high mean dropout propensity are more lopsided.
TEST(SimworldTest, DropoutProneRostersAreLessBalanced) {
  PopulationConfig cfg;
  cfg.days = 100;
  cfg.matches_per_day = 1000;
  const auto pop = cbal::generate_population(cfg);
  std::vector<std::pair<double, double>> rows;  // (mean propensity, |diff|)
  cbal::run_season(cfg, [&](cbal::MatchRecord&& rec) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& t : rec.teams) {
      for (const auto& e : t.roster) {
        s += pop.players[e.player_id].dropout_propensity;
        ++n;
      }
    }
    rows.emplace_back(s / static_cast<double>(n), std::fabs(static_cast<double>(rec.score_diff)));
  });
  ASSERT_EQ(rows.size(), 100000u);
  std::sort(rows.begin(), rows.end());
  const std::size_t decile = rows.size() / 10;
  double low = 0.0, high = 0.0;
  for (std::size_t i = 0; i < decile; ++i) {
    low += rows[i].second;
    high += rows[rows.size() - 1 - i].second;
  }
  EXPECT_GT(high / decile, low / decile);
}

}  // namespace
