#include "shellscope/parser.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "shellscope/errors.hpp"
#include "shellscope/textutil.hpp"

namespace shellscope::parser {

void PromptRule::finalize() {
  command_set_ = std::unordered_set<std::string>(common_commands.begin(), common_commands.end());
  editor_set_ = std::unordered_set<std::string>(editor_commands.begin(), editor_commands.end());
}

bool PromptRule::is_common_command(const std::string& word) const { return command_set_.count(word) > 0; }
bool PromptRule::is_editor(const std::string& word) const { return editor_set_.count(word) > 0; }

PromptRule load_prompt_rule(const std::string& command_list_path) {
  std::ifstream in(command_list_path);
  if (!in) throw DataError("cannot open command list: " + command_list_path);
  PromptRule rule;
  std::string line;
  while (std::getline(in, line)) {
    const std::string w = trim(line);
    if (w.empty() || w[0] == '#') continue;
    rule.common_commands.push_back(w);
  }
  if (rule.common_commands.empty()) throw DataError("command list is empty: " + command_list_path);
  rule.finalize();
  return rule;
}

PromptRule load_prompt_rule_file(const std::string& rule_file_path) {
  std::ifstream in(rule_file_path);
  if (!in) throw DataError("cannot open prompt rule file: " + rule_file_path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw DataError("bad rule line (expected key = value): " + t);
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  auto resolve = [&](const std::string& p) {
    if (p.empty() || p[0] == '/') return p;
    const auto slash = rule_file_path.rfind('/');
    return slash == std::string::npos ? p : rule_file_path.substr(0, slash + 1) + p;
  };
  if (!kv.count("command_list")) throw DataError("prompt rule file missing 'command_list'");
  PromptRule rule = load_prompt_rule(resolve(kv["command_list"]));
  if (kv.count("terminal_symbols")) rule.terminal_symbols = kv["terminal_symbols"];
  if (kv.count("editors")) rule.editor_commands = split_char(kv["editors"], ',');
  if (kv.count("error_patterns")) rule.error_patterns = split_char(kv["error_patterns"], '|');
  if (kv.count("max_prompt_length")) rule.max_prompt_length = std::stoul(kv["max_prompt_length"]);
  rule.finalize();
  return rule;
}

ParserStats& ParserStats::operator+=(const ParserStats& other) {
  activities_in += other.activities_in;
  sessions_out += other.sessions_out;
  activities_without_prompt += other.activities_without_prompt;
  empty_sessions_dropped += other.empty_sessions_dropped;
  duplicates_removed += other.duplicates_removed;
  prompts_found += other.prompts_found;
  lines_total += other.lines_total;
  command_lines += other.command_lines;
  output_lines += other.output_lines;
  buffer_lines_excised += other.buffer_lines_excised;
  lines_dropped += other.lines_dropped;
  utf8_replacements += other.utf8_replacements;
  return *this;
}

namespace {

bool is_digit_span(const std::string& s, std::size_t pos, std::size_t n) {
  if (pos + n > s.size()) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isdigit(static_cast<unsigned char>(s[pos + i]))) return false;
  }
  return true;
}

// matches HH:MM:SS with optional fractional seconds starting at `pos`,
// returns one past the end or npos
std::size_t match_clock(const std::string& s, std::size_t pos) {
  if (!is_digit_span(s, pos, 2) || pos + 8 > s.size()) return std::string::npos;
  if (s[pos + 2] != ':' || !is_digit_span(s, pos + 3, 2) || s[pos + 5] != ':' || !is_digit_span(s, pos + 6, 2)) {
    return std::string::npos;
  }
  std::size_t end = pos + 8;
  if (end < s.size() && s[end] == '.') {
    std::size_t e = end + 1;
    while (e < s.size() && std::isdigit(static_cast<unsigned char>(s[e]))) ++e;
    if (e > end + 1) end = e;
  }
  return end;
}

}  // namespace

std::string strip_time_prefix(const std::string& line) {
  std::size_t end = std::string::npos;
  // ISO-8601 date, optionally followed by a clock and zone
  if (is_digit_span(line, 0, 4) && line.size() >= 10 && line[4] == '-' && is_digit_span(line, 5, 2) &&
      line[7] == '-' && is_digit_span(line, 8, 2)) {
    end = 10;
    if (line.size() > 10 && (line[10] == 'T' || line[10] == ' ')) {
      const std::size_t clock_end = match_clock(line, 11);
      if (clock_end != std::string::npos) {
        end = clock_end;
        if (end < line.size() && line[end] == 'Z') {
          ++end;
        } else if (end + 5 < line.size() && (line[end] == '+' || line[end] == '-') && is_digit_span(line, end + 1, 2)) {
          std::size_t e = end + 3;
          if (e < line.size() && line[e] == ':') ++e;
          if (is_digit_span(line, e, 2)) end = e + 2;
        }
      } else if (line[10] == 'T') {
        end = std::string::npos;  // "2024-01-02Tgarbage" is not a timestamp
      }
    }
  } else if (!line.empty() && line[0] == '[') {
    const std::size_t clock_end = match_clock(line, 1);
    if (clock_end != std::string::npos && clock_end < line.size() && line[clock_end] == ']') end = clock_end + 1;
  } else {
    end = match_clock(line, 0);
  }
  if (end == std::string::npos || end >= line.size()) return line;
  // a timestamp prefix must be followed by whitespace
  if (line[end] != ' ' && line[end] != '\t') return line;
  std::size_t b = end;
  while (b < line.size() && (line[b] == ' ' || line[b] == '\t')) ++b;
  return line.substr(b);
}

namespace {

bool brackets_balanced(const std::string& s) {
  std::vector<char> stack;
  for (char c : s) {
    switch (c) {
      case '(':
      case '[':
      case '{':
        stack.push_back(c);
        break;
      case ')':
        if (stack.empty() || stack.back() != '(') return false;
        stack.pop_back();
        break;
      case ']':
        if (stack.empty() || stack.back() != '[') return false;
        stack.pop_back();
        break;
      case '}':
        if (stack.empty() || stack.back() != '{') return false;
        stack.pop_back();
        break;
      default:
        break;
    }
  }
  return stack.empty();
}

// NAME=... at the start of the candidate marks an environment-variable
// assignment, not a prompt
bool looks_like_env_assignment(const std::string& candidate) {
  std::size_t i = 0;
  while (i < candidate.size() && (candidate[i] == ' ' || candidate[i] == '\t')) ++i;
  if (i >= candidate.size()) return false;
  if (!std::isalpha(static_cast<unsigned char>(candidate[i])) && candidate[i] != '_') return false;
  ++i;
  while (i < candidate.size() &&
         (std::isalnum(static_cast<unsigned char>(candidate[i])) || candidate[i] == '_')) {
    ++i;
  }
  return i < candidate.size() && candidate[i] == '=';
}

std::string word_after(const std::string& s, std::size_t pos) {
  std::size_t b = pos;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  std::size_t e = b;
  while (e < s.size() && s[e] != ' ' && s[e] != '\t') ++e;
  return s.substr(b, e - b);
}

}  // namespace

std::vector<DetectedPrompt> detect_prompts(const model::RawActivity& activity, const PromptRule& rule) {
  std::vector<DetectedPrompt> prompts;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < activity.lines.size(); ++i) {
    const std::string line = strip_time_prefix(activity.lines[i]);
    const std::size_t pos = line.find_first_of(rule.terminal_symbols);
    if (pos == std::string::npos) continue;
    const std::string word = word_after(line, pos + 1);
    if (word.empty() || !rule.is_common_command(word)) continue;
    const std::string candidate = line.substr(0, pos + 1);
    if (candidate.size() > rule.max_prompt_length) continue;
    if (!brackets_balanced(candidate)) continue;
    if (looks_like_env_assignment(candidate)) continue;
    if (seen.insert(candidate).second) prompts.push_back({candidate, i});
  }
  return prompts;
}

namespace {

// longest detected prompt that prefixes the line, or nullptr
const DetectedPrompt* match_prompt(const std::string& line, const std::vector<const DetectedPrompt*>& by_length) {
  for (const auto* p : by_length) {
    if (line.starts_with(p->prompt_text)) return p;
  }
  return nullptr;
}

bool matches_error_pattern(const std::string& line, const PromptRule& rule) {
  return std::any_of(rule.error_patterns.begin(), rule.error_patterns.end(),
                     [&](const std::string& pat) { return !pat.empty() && contains(line, pat); });
}

}  // namespace

std::optional<model::Session> extract_commands(const model::RawActivity& activity,
                                               const std::vector<DetectedPrompt>& prompts,
                                               const PromptRule& rule, ParserStats* stats) {
  if (prompts.empty()) return std::nullopt;

  std::vector<const DetectedPrompt*> by_length;
  by_length.reserve(prompts.size());
  for (const auto& p : prompts) by_length.push_back(&p);
  std::sort(by_length.begin(), by_length.end(), [](const DetectedPrompt* a, const DetectedPrompt* b) {
    if (a->prompt_text.size() != b->prompt_text.size()) return a->prompt_text.size() > b->prompt_text.size();
    return a->prompt_text < b->prompt_text;
  });

  model::Session session;
  session.session_id = activity.activity_id;
  bool in_buffer = false;
  ParserStats local;
  local.lines_total = activity.lines.size();

  for (std::size_t i = 0; i < activity.lines.size(); ++i) {
    const std::string line = strip_time_prefix(activity.lines[i]);
    const DetectedPrompt* prompt = match_prompt(line, by_length);

    if (in_buffer) {
      if (prompt == nullptr) {
        ++local.buffer_lines_excised;
        continue;
      }
      in_buffer = false;  // prompt resynchronization ends the buffer
    }

    if (prompt == nullptr) {
      if (!session.commands.empty()) {
        auto& cmd = session.commands.back();
        ++cmd.output_line_count;
        if (matches_error_pattern(line, rule)) cmd.had_error_output = true;
        ++local.output_lines;
      } else {
        ++local.lines_dropped;
      }
      continue;
    }

    std::string rest = trim(line.substr(prompt->prompt_text.size()));
    if (rest.empty()) continue;  // prompt with no input

    // join wrapped lines: trailing backslash continues on the next raw line
    while (rest.ends_with('\\') && i + 1 < activity.lines.size()) {
      rest.pop_back();
      rest = rtrim(rest);
      ++i;
      const std::string cont = trim(activity.lines[i]);
      if (!cont.empty()) rest += " " + cont;
      ++local.command_lines;
    }

    model::CommandLine cmd;
    cmd.text = rest;
    session.commands.push_back(std::move(cmd));
    ++local.command_lines;

    if (rule.is_editor(first_word(rest))) in_buffer = true;
  }

  local.prompts_found = prompts.size();
  if (stats) *stats += local;

  if (session.commands.empty()) return std::nullopt;

  std::vector<std::string> texts;
  texts.reserve(prompts.size());
  for (const auto& p : prompts) texts.push_back(p.prompt_text);
  std::sort(texts.begin(), texts.end());
  session.prompts = std::move(texts);
  return session;
}

std::pair<std::vector<model::Session>, ParserStats> parse_corpus(const std::vector<model::RawActivity>& activities,
                                                                 const PromptRule& rule) {
  std::vector<model::Session> sessions;
  ParserStats stats;
  for (const auto& a : activities) {
    ++stats.activities_in;
    const auto prompts = detect_prompts(a, rule);
    if (prompts.empty()) {
      ++stats.activities_without_prompt;
      stats.lines_total += a.lines.size();
      stats.lines_dropped += a.lines.size();
      continue;
    }
    auto session = extract_commands(a, prompts, rule, &stats);
    if (!session) {
      ++stats.empty_sessions_dropped;
      continue;
    }
    sessions.push_back(std::move(*session));
  }
  sessions = model::dedupe_sessions(std::move(sessions), &stats.duplicates_removed);
  stats.sessions_out = sessions.size();
  return {std::move(sessions), stats};
}

}  // namespace shellscope::parser
