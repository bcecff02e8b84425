#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "shellscope/session.hpp"
#include "shellscope/tagging.hpp"

namespace shellscope::synth {

/// Deterministic raw-keystroke-log generator. Emits the defect taxonomy the
/// parser has to survive (varied prompts across and within sessions,
/// interleaved output, wrapped lines, editor buffers, subshells, timestamp
/// prefixes) together with exact ground truth.
struct GeneratorConfig {
  int num_activities = 1000;
  int min_commands = 3;
  int max_commands = 12;
  double suspicious_injection_rate = 0.05;  // sessions planted with >= 3 unique keywords
  double abstained_injection_rate = 0.05;   // sessions planted with 1-2 unique keywords
  double outlier_injection_rate = 0.02;     // sessions with unusual command syntax
  double wrap_probability = 0.15;           // long commands continued with a backslash
  double editor_probability = 0.10;         // sessions containing an editor buffer
  double subshell_probability = 0.08;       // sessions containing a subshell block
  double time_prefix_probability = 0.25;    // activities whose lines carry timestamps
  double prompt_change_probability = 0.25;  // prompt varies mid-session after a cd
  double cycle_probability = 0.10;          // sessions containing a command loop
  double no_prompt_probability = 0.02;      // activities that are pure output (unparsable)
  double adversarial_buffer_probability = 0.10;  // editor buffers holding a transcript line
  std::uint64_t seed = 1;                        // mandatory; there is no unseeded mode

  void validate() const;
};

struct GroundTruthEntry {
  std::string activity_id;
  std::vector<std::string> prompts;   // every prompt string used
  std::vector<std::string> commands;  // what a perfect extractor yields, in order
  model::SessionLabel planted_label = model::SessionLabel::Normal;
  std::vector<std::string> planted_keywords;  // unique keyword strings
  std::vector<std::string> planted_technique_ids;
  bool is_outlier = false;
  bool has_editor_buffer = false;
  bool has_subshell = false;
  std::size_t subshell_start = 0;  // indices into `commands` when has_subshell
  std::size_t subshell_len = 0;
};

struct GroundTruth {
  std::vector<GroundTruthEntry> entries;
  std::unordered_map<std::string, std::size_t> by_id;

  const GroundTruthEntry* find(const std::string& activity_id) const;
  void rebuild_index();
};

std::pair<std::vector<model::RawActivity>, GroundTruth> generate(const GeneratorConfig& config,
                                                                 const std::vector<tagging::KeywordRule>& rules);

void save_ground_truth(const GroundTruth& truth, const std::string& path);
GroundTruth load_ground_truth(const std::string& path);

}  // namespace shellscope::synth
