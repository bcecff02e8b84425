#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "shellscope/session.hpp"

namespace shellscope::cleaner {

struct CleaningConfig {
  bool drop_error_lines = true;
  std::uint32_t max_consecutive_spaces = 1;
  std::uint32_t max_char_repeat = 3;
  // first token of every surviving command must match this (whole-token)
  std::string command_name_pattern = R"(^[A-Za-z0-9_./~+<>-]+$)";
  std::string number_mask_token = "<NUM>";
  std::string hex_mask_token = "<HEX>";
  // applied in order, before hex/number masking
  std::vector<std::pair<std::string, std::string>> special_word_masks;
  std::uint32_t cycle_min_repeats = 3;

  static CleaningConfig defaults();
  void validate() const;  // throws DataError on out-of-range fields
};

struct CleanStats {
  std::size_t lines_dropped_error = 0;
  std::size_t lines_dropped_artifact = 0;
  std::size_t lines_dropped_name_filter = 0;
  std::size_t sessions_emptied = 0;
  std::size_t cycles_collapsed = 0;

  CleanStats& operator+=(const CleanStats& other);
};

/// Apply the cleaning filters in their fixed order. Returns nullopt when the
/// session loses every command (EmptySession).
std::optional<model::Session> clean_session(model::Session session, const CleaningConfig& config,
                                            CleanStats* stats = nullptr);

// individual filters, exposed for tests
std::string collapse_spaces(const std::string& text, std::uint32_t max_run);
std::string collapse_char_repeats(const std::string& text, std::uint32_t max_run);
std::string mask_numbers(const std::string& text, const std::string& token);
std::string mask_hex_strings(const std::string& text, const std::string& token);
std::string apply_masks(const std::string& text, const CleaningConfig& config);

/// Greedy smallest-period collapse of blocks repeated >= min_repeats times,
/// iterated to a fixed point. Returns kept commands plus annotations.
std::pair<std::vector<model::CommandLine>, std::vector<model::CycleAnnotation>> collapse_cycles(
    std::vector<model::CommandLine> commands, std::uint32_t min_repeats);

struct SubshellFragment {
  std::string pattern_name;
  std::size_t start_index = 0;  // position in the input session
  std::vector<model::CommandLine> commands;
};

/// Default content patterns for HDFS, Spark, SQL and Python subshells.
std::vector<std::pair<std::string, std::string>> default_subshell_patterns();

/// Remove contiguous command runs that match subshell patterns; the removed
/// runs come back as fragments for optional archiving. A session that was
/// entirely subshell content yields nullopt (EmptySession).
std::optional<model::Session> strip_subshells(model::Session session,
                                              const std::vector<std::pair<std::string, std::string>>& patterns,
                                              std::vector<SubshellFragment>* fragments = nullptr);

}  // namespace shellscope::cleaner
