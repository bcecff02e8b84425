#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace shellscope::model {

/// One captured keystroke-log object: raw terminal lines plus metadata.
/// Lines are kept byte-for-byte as read; nothing is trimmed at this layer.
struct RawActivity {
  std::string activity_id;
  std::vector<std::string> lines;
  std::optional<std::string> captured_at;  // ISO-8601, when present

  bool operator==(const RawActivity&) const = default;
};

/// One cleaned command with the output metadata collected while parsing.
struct CommandLine {
  std::string text;                     // no prompt prefix, no trailing newline
  std::uint32_t output_line_count = 0;  // raw lines attributed to this command
  bool had_error_output = false;

  bool operator==(const CommandLine&) const = default;
};

enum class SessionLabel { Unlabeled, Normal, Abnormal, Abstained };

std::string label_to_string(SessionLabel label);
SessionLabel label_from_string(const std::string& s);

/// An ATT&CK technique hit on one command of a session.
struct TechniqueTag {
  std::string technique_id;  // "T1105" or "T1574.006"
  std::string technique_name;
  std::size_t command_index = 0;
  std::string matched_text;

  bool operator==(const TechniqueTag&) const = default;
};

/// Per-session detector outputs. The ensemble score is always the arithmetic
/// mean of the four normalized scores.
struct AnomalyRecord {
  std::map<std::string, double> per_detector_raw;
  std::map<std::string, double> per_detector_normalized;
  double ensemble_score = 0.0;

  bool operator==(const AnomalyRecord&) const = default;
};

/// Marks a collapsed command loop: `period` commands starting at
/// `start_index` ran `repeats` times in the original session.
struct CycleAnnotation {
  std::size_t start_index = 0;
  std::size_t period = 0;
  std::uint32_t repeats = 0;

  bool operator==(const CycleAnnotation&) const = default;
};

struct Session {
  std::string session_id;
  std::vector<CommandLine> commands;
  std::vector<std::string> prompts;  // detected prompt strings, sorted unique
  std::vector<TechniqueTag> tags;
  std::map<std::string, std::uint32_t> keyword_hits;
  SessionLabel label = SessionLabel::Unlabeled;
  std::optional<AnomalyRecord> anomaly;
  std::vector<CycleAnnotation> cycles;

  /// Command texts joined with '\n'. This is the dedupe key and the text the
  /// tokenizer and encoder consume.
  std::string joined_command_text() const;

  bool operator==(const Session&) const = default;
};

/// Collapse sessions whose full command-text sequences are identical to the
/// first occurrence; order otherwise preserved. `removed` (optional) counts
/// dropped duplicates.
std::vector<Session> dedupe_sessions(std::vector<Session> sessions, std::size_t* removed = nullptr);

}  // namespace shellscope::model
