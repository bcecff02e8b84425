#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "shellscope/session.hpp"

namespace shellscope::tagging {

/// How a suspicious keyword is searched in command text. Commands match as
/// whole shell tokens; file names and variables (".bash_history",
/// "LD_PRELOAD", "passwd", ...) appear inside larger arguments and match as
/// substrings of a token.
enum class MatchMode { Token, Substring };

struct KeywordRule {
  std::string technique_id;  // T\d{4}(\.\d{3})?
  std::string technique_name;
  std::string keyword;
  MatchMode mode = MatchMode::Token;
};

/// Load the keyword table (CSV: technique_id, technique_name, keyword,
/// match). Validates ids and non-empty keywords.
std::vector<KeywordRule> load_keyword_rules(const std::string& path);

/// Whole-token, case-sensitive keyword occurrence counts over the cleaned
/// command text. Token boundaries are whitespace and the shell
/// metacharacters ; | & < > ( ) =
std::map<std::string, std::uint32_t> match_keywords(const model::Session& session,
                                                    const std::vector<KeywordRule>& rules);

struct LabelPolicy {
  std::uint32_t abnormal_min_unique_keywords = 3;
  std::uint32_t normal_max_unique_keywords = 0;

  void validate() const;
};

/// Trichotomy over unique keyword count u: u >= abnormal_min -> Abnormal,
/// u <= normal_max -> Normal, otherwise Abstained.
model::SessionLabel label_session(const model::Session& session, const LabelPolicy& policy);

struct RegexRule {
  std::string technique_id;
  std::string technique_name;
  std::string tactic;
  std::string pattern;
};

/// Load the technique regex table (CSV: technique_id, technique_name,
/// tactic, pattern). A pattern that fails to compile is a load-time error
/// naming the rule.
std::vector<RegexRule> load_regex_rules(const std::string& path);

/// Test every command against every technique pattern; a command may carry
/// several tags. Idempotent and rule-order independent (tags are sorted).
std::vector<model::TechniqueTag> annotate_techniques(const model::Session& session,
                                                     const std::vector<RegexRule>& rules);

/// Render a session with its header (id, ensemble score, keyword hits) and a
/// "-> [Txxxx: Name, ...]" line after each tagged command.
std::string render_annotated(const model::Session& session);

/// Sessions (not occurrences) per technique.
std::map<std::string, std::size_t> technique_histogram(const std::vector<model::Session>& sessions);

/// Tactic rollup via the technique->tactic mapping carried by the regex
/// rules.
std::map<std::string, std::size_t> tactic_histogram(const std::vector<model::Session>& sessions,
                                                    const std::vector<RegexRule>& rules);

}  // namespace shellscope::tagging
