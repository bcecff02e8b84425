#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "shellscope/session.hpp"

namespace shellscope::parser {

/// Heuristic configuration for prompt recovery. The shipped command list has
/// 140 entries; terminal symbols default to $, # and >.
struct PromptRule {
  std::string terminal_symbols = "$#>";
  std::vector<std::string> common_commands;
  std::vector<std::string> editor_commands = {"vi", "vim", "nano", "emacs", "less", "more", "man"};
  std::vector<std::string> error_patterns = {"command not found", "No such file or directory",
                                             "Permission denied"};
  std::size_t max_prompt_length = 64;

  void finalize();  // builds lookup sets; call after mutating the lists
  bool is_common_command(const std::string& word) const;
  bool is_editor(const std::string& word) const;

 private:
  std::unordered_set<std::string> command_set_;
  std::unordered_set<std::string> editor_set_;
};

/// Load the newline-separated command list and build a rule around it.
PromptRule load_prompt_rule(const std::string& command_list_path);

/// Parse a key=value rule file (symbols, command list path, editors, error
/// patterns, max prompt length). Relative paths resolve against the file.
PromptRule load_prompt_rule_file(const std::string& rule_file_path);

struct DetectedPrompt {
  std::string prompt_text;      // ends with a terminal symbol, brackets balanced
  std::size_t first_seen_line;  // index into the activity's lines

  bool operator==(const DetectedPrompt&) const = default;
};

/// Order-independent counters aggregated over a corpus parse.
struct ParserStats {
  std::size_t activities_in = 0;
  std::size_t sessions_out = 0;
  std::size_t activities_without_prompt = 0;
  std::size_t empty_sessions_dropped = 0;
  std::size_t duplicates_removed = 0;
  std::size_t prompts_found = 0;
  std::size_t lines_total = 0;
  std::size_t command_lines = 0;
  std::size_t output_lines = 0;
  std::size_t buffer_lines_excised = 0;
  std::size_t lines_dropped = 0;  // output before any command
  std::size_t utf8_replacements = 0;

  ParserStats& operator+=(const ParserStats& other);
};

/// Strip a leading timestamp (HH:MM:SS, [HH:MM:SS] or ISO-8601 prefix) plus
/// following whitespace. Returns the line unchanged when none matches.
std::string strip_time_prefix(const std::string& line);

/// §3.2 heuristic: per line, locate the first terminal symbol, test the word
/// after it against the common-command list and save the prefix as a prompt.
/// Candidates with unbalanced brackets, over-long text or the shape of an
/// environment-variable assignment are rejected.
std::vector<DetectedPrompt> detect_prompts(const model::RawActivity& activity, const PromptRule& rule);

/// Recover the command sequence from an activity given its detected prompts.
/// Returns nullopt when no command could be extracted (EmptySession).
std::optional<model::Session> extract_commands(const model::RawActivity& activity,
                                               const std::vector<DetectedPrompt>& prompts,
                                               const PromptRule& rule, ParserStats* stats = nullptr);

std::pair<std::vector<model::Session>, ParserStats> parse_corpus(const std::vector<model::RawActivity>& activities,
                                                                 const PromptRule& rule);

}  // namespace shellscope::parser
