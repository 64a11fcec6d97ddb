#include "cbal/matchlog.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "cbal/error.hpp"

namespace cbal {

using ordered_json = nlohmann::ordered_json;

namespace {

std::size_t index_of(const std::vector<std::string>& names, const std::string& name,
                     const char* what) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    throw FormatError(std::string("unknown ") + what + " '" + name + "'");
  }
  return static_cast<std::size_t>(it - names.begin());
}

std::size_t parse_mode(const std::string& mode) {
  if (mode == "3v3") return 3;
  if (mode == "6v6") return 6;
  throw FormatError("unknown mode '" + mode + "'");
}

}  // namespace

std::string match_record_to_json(const MatchRecord& rec, const Vocabulary& vocab) {
  ordered_json j;
  j["match_id"] = rec.match_id;
  j["day_index"] = rec.day_index;
  j["mode"] = rec.mode();
  ordered_json rosters = ordered_json::array();
  ordered_json humans = ordered_json::array();
  ordered_json scores = ordered_json::array();
  for (const auto& team : rec.teams) {
    ordered_json roster = ordered_json::array();
    for (const auto& e : team.roster) {
      ordered_json p;
      p["player_id"] = e.player_id;
      p["role"] = vocab.roles.at(e.role);
      p["skill_rating"] = e.skill_rating;
      ordered_json counts = ordered_json::object();
      for (std::size_t a = 0; a < e.action_counts.size(); ++a) {
        counts[vocab.actions.at(a)] = e.action_counts[a];
      }
      p["action_counts"] = std::move(counts);
      p["dropout"] = e.dropout;
      roster.push_back(std::move(p));
    }
    rosters.push_back(std::move(roster));
    humans.push_back(team.human_count);
    scores.push_back(team.final_score);
  }
  j["roster"] = std::move(rosters);
  j["human_count"] = std::move(humans);
  j["final_score"] = std::move(scores);
  j["score_diff"] = rec.score_diff;
  return j.dump();
}

MatchRecord match_record_from_json(std::string_view line, const Vocabulary& vocab) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed JSON: ") + e.what());
  }
  try {
    MatchRecord rec;
    rec.match_id = j.at("match_id").get<std::uint64_t>();
    rec.day_index = j.at("day_index").get<std::int64_t>();
    rec.team_size = parse_mode(j.at("mode").get<std::string>());
    const auto& rosters = j.at("roster");
    const auto& humans = j.at("human_count");
    const auto& scores = j.at("final_score");
    if (rosters.size() != 2 || humans.size() != 2 || scores.size() != 2) {
      throw FormatError("expected exactly two teams");
    }
    for (std::size_t t = 0; t < 2; ++t) {
      auto& team = rec.teams[t];
      for (const auto& p : rosters[t]) {
        RosterEntry e;
        e.player_id = p.at("player_id").get<std::uint64_t>();
        e.role = index_of(vocab.roles, p.at("role").get<std::string>(), "role");
        e.skill_rating = p.at("skill_rating").get<double>();
        e.action_counts.assign(vocab.actions.size(), 0);
        for (const auto& [name, count] : p.at("action_counts").items()) {
          e.action_counts[index_of(vocab.actions, name, "action")] = count.get<std::uint32_t>();
        }
        e.dropout = p.at("dropout").get<bool>();
        team.roster.push_back(std::move(e));
      }
      team.human_count = humans[t].get<std::uint32_t>();
      team.final_score = scores[t].get<std::uint32_t>();
    }
    rec.score_diff = j.at("score_diff").get<std::int64_t>();
    try {
      rec.check_invariants(vocab.roles.size(), vocab.actions.size());
    } catch (const InvariantError& e) {
      throw FormatError(e.what());
    }
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad record: ") + e.what());
  }
}

void write_matchlog(std::ostream& out, std::span<const MatchRecord> records,
                    const Vocabulary& vocab) {
  out << kMatchlogHeader << '\n';
  for (const auto& rec : records) out << match_record_to_json(rec, vocab) << '\n';
}

std::vector<MatchRecord> read_matchlog(std::istream& in, const Vocabulary& vocab) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("matchlog is empty");
  try {
    auto header = nlohmann::json::parse(line);
    if (header.value("schema", "") != "matchlog/1") {
      throw FormatError("unsupported matchlog schema");
    }
  } catch (const nlohmann::json::exception&) {
    throw FormatError("matchlog header is not JSON");
  }
  std::vector<MatchRecord> records;
  std::size_t line_no = 1;
  std::int64_t last_day = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(match_record_from_json(line, vocab));
    } catch (const FormatError& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (records.back().day_index < last_day) {
      throw FormatError("line " + std::to_string(line_no) + ": day_index decreases");
    }
    last_day = records.back().day_index;
  }
  return records;
}

void write_matchlog_file(const std::string& path, std::span<const MatchRecord> records,
                         const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_matchlog(out, records, vocab);
}

std::vector<MatchRecord> read_matchlog_file(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_matchlog(in, vocab);
}

}  // namespace cbal
