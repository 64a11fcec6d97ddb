#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cbal/simworld.hpp"

namespace cbal {

inline constexpr std::string_view kMatchlogHeader = R"({"schema":"matchlog/1"})";

/// Role and action vocabularies that map record indices to names.
struct Vocabulary {
  std::vector<std::string> roles;
  std::vector<std::string> actions;
};

std::string match_record_to_json(const MatchRecord& rec, const Vocabulary& vocab);
MatchRecord match_record_from_json(std::string_view line, const Vocabulary& vocab);

/// Writes the header line followed by one record per line.
void write_matchlog(std::ostream& out, std::span<const MatchRecord> records,
                    const Vocabulary& vocab);
/// Reads a matchlog; throws FormatError naming the offending line.
std::vector<MatchRecord> read_matchlog(std::istream& in, const Vocabulary& vocab);

void write_matchlog_file(const std::string& path, std::span<const MatchRecord> records,
                         const Vocabulary& vocab);
std::vector<MatchRecord> read_matchlog_file(const std::string& path, const Vocabulary& vocab);

}  // namespace cbal
