#include "shellscope/cleaner.hpp"

#include <cctype>
#include <regex>

#include "shellscope/errors.hpp"
#include "shellscope/textutil.hpp"

namespace shellscope::cleaner {

CleaningConfig CleaningConfig::defaults() {
  CleaningConfig c;
  c.special_word_masks = {
      // UUIDs first: their hex chunks must not fall through to <HEX>/<NUM>
      {R"([0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12})", "<UUID>"},
      // hostnames with at least three labels, each starting with a letter
      {R"(([A-Za-z][A-Za-z0-9-]*\.){2,}[A-Za-z][A-Za-z0-9-]*)", "<HOST>"},
      // absolute paths deeper than four components
      {R"((/[^/ \t]+){5,})", "<PATH>"},
  };
  return c;
}

void CleaningConfig::validate() const {
  if (max_consecutive_spaces < 1) throw DataError("max_consecutive_spaces must be >= 1");
  if (max_char_repeat < 2) throw DataError("max_char_repeat must be >= 2");
  if (cycle_min_repeats < 2) throw DataError("cycle_min_repeats must be >= 2");
}

CleanStats& CleanStats::operator+=(const CleanStats& other) {
  lines_dropped_error += other.lines_dropped_error;
  lines_dropped_artifact += other.lines_dropped_artifact;
  lines_dropped_name_filter += other.lines_dropped_name_filter;
  sessions_emptied += other.sessions_emptied;
  cycles_collapsed += other.cycles_collapsed;
  return *this;
}

std::string collapse_spaces(const std::string& text, std::uint32_t max_run) {
  std::string out;
  out.reserve(text.size());
  std::uint32_t run = 0;
  for (char c : text) {
    if (c == ' ') {
      if (++run <= max_run) out += c;
    } else {
      run = 0;
      out += c;
    }
  }
  return out;
}

std::string collapse_char_repeats(const std::string& text, std::uint32_t max_run) {
  std::string out;
  out.reserve(text.size());
  std::uint32_t run = 0;
  char prev = '\0';
  for (char c : text) {
    if (c == prev && c != ' ') {
      if (++run <= max_run) out += c;
    } else {
      prev = c;
      run = 1;
      out += c;
    }
  }
  return out;
}

std::string mask_numbers(const std::string& text, const std::string& token) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isdigit(static_cast<unsigned char>(text[i]))) {
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      out += token;
    } else {
      out += text[i++];
    }
  }
  return out;
}

namespace {

bool is_hex_char(char c) {
  return std::isdigit(static_cast<unsigned char>(c)) || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F');
}

}  // namespace

std::string mask_hex_strings(const std::string& text, const std::string& token) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_hex_char(text[i])) {
      std::size_t j = i;
      bool has_digit = false, has_letter = false;
      while (j < text.size() && is_hex_char(text[j])) {
        if (std::isdigit(static_cast<unsigned char>(text[j]))) {
          has_digit = true;
        } else {
          has_letter = true;
        }
        ++j;
      }
      // a hex blob needs both digits and letters; pure digit runs are
      // numbers, pure letter runs are likely words
      if (j - i >= 8 && has_digit && has_letter) {
        out += token;
      } else {
        out += text.substr(i, j - i);
      }
      i = j;
    } else {
      out += text[i++];
    }
  }
  return out;
}

std::string apply_masks(const std::string& text, const CleaningConfig& config) {
  std::string cur = text;
  for (const auto& [pattern, token] : config.special_word_masks) {
    cur = std::regex_replace(cur, std::regex(pattern), token);
  }
  cur = mask_hex_strings(cur, config.hex_mask_token);
  cur = mask_numbers(cur, config.number_mask_token);
  return cur;
}

namespace {

bool looks_like_artifact(const std::string& text) {
  for (char c : text) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (u < 0x20 && c != '\t') return true;  // stray control bytes from editing
    if (u == 0x7F) return true;
  }
  static const std::regex completion_re(R"(Display all \d+ possibilities)");
  return std::regex_search(text, completion_re);
}

bool texts_equal(const std::vector<model::CommandLine>& cmds, std::size_t a, std::size_t b, std::size_t len) {
  for (std::size_t k = 0; k < len; ++k) {
    if (cmds[a + k].text != cmds[b + k].text) return false;
  }
  return true;
}

// One left-to-right pass of greedy smallest-period collapsing. index_map
// maps every input position to the output position of its surviving copy.
bool collapse_cycles_once(std::vector<model::CommandLine>& commands, std::vector<model::CycleAnnotation>& notes,
                          std::uint32_t min_repeats, std::vector<std::size_t>& index_map) {
  const std::size_t n = commands.size();
  std::vector<model::CommandLine> out;
  out.reserve(n);
  index_map.assign(n, 0);
  bool changed = false;
  std::size_t i = 0;
  while (i < n) {
    bool collapsed = false;
    for (std::size_t period = 1; period * min_repeats <= n - i; ++period) {
      std::uint32_t repeats = 1;
      while (i + static_cast<std::size_t>(repeats + 1) * period <= n &&
             texts_equal(commands, i, i + repeats * period, period)) {
        ++repeats;
      }
      if (repeats >= min_repeats) {
        const std::size_t out_start = out.size();
        notes.push_back({out_start, period, repeats});
        for (std::size_t k = 0; k < static_cast<std::size_t>(repeats) * period; ++k) {
          index_map[i + k] = out_start + (k % period);
        }
        for (std::size_t k = 0; k < period; ++k) out.push_back(commands[i + k]);
        i += static_cast<std::size_t>(repeats) * period;
        collapsed = true;
        changed = true;
        break;
      }
    }
    if (!collapsed) {
      index_map[i] = out.size();
      out.push_back(commands[i]);
      ++i;
    }
  }
  commands = std::move(out);
  return changed;
}

}  // namespace

std::pair<std::vector<model::CommandLine>, std::vector<model::CycleAnnotation>> collapse_cycles(
    std::vector<model::CommandLine> commands, std::uint32_t min_repeats) {
  std::vector<model::CycleAnnotation> notes;
  // Collapsing can expose a new cycle across the seam, so iterate to a fixed
  // point; earlier annotations are remapped through each pass so positions
  // stay valid for the final command list.
  while (true) {
    std::vector<model::CycleAnnotation> pass_notes;
    std::vector<std::size_t> index_map;
    if (!collapse_cycles_once(commands, pass_notes, min_repeats, index_map)) break;
    for (auto& note : notes) {
      note.start_index = index_map[note.start_index];
      const std::size_t remaining = commands.size() - note.start_index;
      note.period = std::min(note.period, remaining);
    }
    notes.insert(notes.end(), pass_notes.begin(), pass_notes.end());
  }
  return {std::move(commands), std::move(notes)};
}

std::optional<model::Session> clean_session(model::Session session, const CleaningConfig& config,
                                            CleanStats* stats) {
  config.validate();
  CleanStats local;
  const std::regex name_re(config.command_name_pattern);

  std::vector<model::CommandLine> kept;
  kept.reserve(session.commands.size());
  for (auto& cmd : session.commands) {
    if (config.drop_error_lines && cmd.had_error_output) {
      ++local.lines_dropped_error;
      continue;
    }
    if (looks_like_artifact(cmd.text)) {
      ++local.lines_dropped_artifact;
      continue;
    }
    cmd.text = collapse_spaces(cmd.text, config.max_consecutive_spaces);
    cmd.text = collapse_char_repeats(cmd.text, config.max_char_repeat);
    if (!std::regex_search(first_word(cmd.text), name_re)) {
      ++local.lines_dropped_name_filter;
      continue;
    }
    cmd.text = apply_masks(cmd.text, config);
    kept.push_back(std::move(cmd));
  }

  auto [collapsed, notes] = collapse_cycles(std::move(kept), config.cycle_min_repeats);
  local.cycles_collapsed += notes.size();
  session.commands = std::move(collapsed);
  for (const auto& n : notes) session.cycles.push_back(n);

  if (stats) *stats += local;
  if (session.commands.empty()) {
    if (stats) ++stats->sessions_emptied;
    return std::nullopt;
  }
  return session;
}

std::vector<std::pair<std::string, std::string>> default_subshell_patterns() {
  return {
      {"python", R"(^(>>>|\.\.\.)( |$))"},
      {"sql", R"(^(SELECT|INSERT|UPDATE|DELETE|CREATE|DROP|ALTER|SHOW|USE|DESCRIBE|EXPLAIN|GRANT)\b)"},
      {"spark", R"(^(val |var |import org\.apache\.spark|spark\.))"},
      {"hdfs", R"(^(hdfs dfs|hadoop fs)\b)"},
  };
}

std::optional<model::Session> strip_subshells(model::Session session,
                                              const std::vector<std::pair<std::string, std::string>>& patterns,
                                              std::vector<SubshellFragment>* fragments) {
  std::vector<std::pair<std::string, std::regex>> compiled;
  compiled.reserve(patterns.size());
  for (const auto& [name, pattern] : patterns) {
    try {
      compiled.emplace_back(name, std::regex(pattern));
    } catch (const std::regex_error& e) {
      throw DataError("bad subshell pattern '" + name + "': " + e.what());
    }
  }

  auto match_name = [&](const std::string& text) -> const std::string* {
    for (const auto& [name, re] : compiled) {
      if (std::regex_search(text, re)) return &name;
    }
    return nullptr;
  };

  std::vector<model::CommandLine> kept;
  kept.reserve(session.commands.size());
  std::size_t i = 0;
  while (i < session.commands.size()) {
    const std::string* name = match_name(session.commands[i].text);
    if (name == nullptr) {
      kept.push_back(std::move(session.commands[i]));
      ++i;
      continue;
    }
    SubshellFragment frag;
    frag.pattern_name = *name;
    frag.start_index = i;
    while (i < session.commands.size() && match_name(session.commands[i].text) != nullptr) {
      frag.commands.push_back(std::move(session.commands[i]));
      ++i;
    }
    if (fragments) fragments->push_back(std::move(frag));
  }

  session.commands = std::move(kept);
  if (session.commands.empty()) return std::nullopt;
  return session;
}

}  // namespace shellscope::cleaner
