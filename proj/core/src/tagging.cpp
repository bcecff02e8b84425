#include "shellscope/tagging.hpp"

#include <algorithm>
#include <cstdio>
#include <regex>
#include <set>
#include <tuple>

#include "shellscope/csv.hpp"
#include "shellscope/errors.hpp"
#include "shellscope/textutil.hpp"

namespace shellscope::tagging {

namespace {

const std::regex kTechniqueIdRe(R"(T\d{4}(\.\d{3})?)");

bool is_token_delim(char c) {
  switch (c) {
    case ' ':
    case '\t':
    case ';':
    case '|':
    case '&':
    case '<':
    case '>':
    case '(':
    case ')':
    case '=':
      return true;
    default:
      return false;
  }
}

std::vector<std::string> shell_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_token_delim(text[i])) ++i;
    std::size_t start = i;
    while (i < text.size() && !is_token_delim(text[i])) ++i;
    if (i > start) out.push_back(text.substr(start, i - start));
  }
  return out;
}

}  // namespace

std::vector<KeywordRule> load_keyword_rules(const std::string& path) {
  std::vector<KeywordRule> rules;
  for (const auto& row : read_csv(path)) {
    if (row.size() < 3) throw DataError("keyword table row needs technique_id, technique_name, keyword");
    if (row[0] == "technique_id") continue;  // header
    KeywordRule r;
    r.technique_id = trim(row[0]);
    r.technique_name = trim(row[1]);
    r.keyword = trim(row[2]);
    if (!std::regex_match(r.technique_id, kTechniqueIdRe)) {
      throw DataError("bad technique id in keyword table: " + r.technique_id);
    }
    if (r.keyword.empty()) throw DataError("empty keyword for technique " + r.technique_id);
    if (row.size() >= 4) {
      const std::string mode = trim(row[3]);
      if (mode == "substring") {
        r.mode = MatchMode::Substring;
      } else if (mode == "token" || mode.empty()) {
        r.mode = MatchMode::Token;
      } else {
        throw DataError("bad match mode '" + mode + "' for keyword " + r.keyword);
      }
    }
    rules.push_back(std::move(r));
  }
  if (rules.empty()) throw DataError("keyword table is empty: " + path);
  return rules;
}

std::map<std::string, std::uint32_t> match_keywords(const model::Session& session,
                                                    const std::vector<KeywordRule>& rules) {
  // distinct keyword strings; the same keyword may serve several techniques
  std::map<std::string, MatchMode> keywords;
  for (const auto& r : rules) keywords.emplace(r.keyword, r.mode);

  std::map<std::string, std::uint32_t> hits;
  for (const auto& cmd : session.commands) {
    const auto tokens = shell_tokens(cmd.text);
    for (const auto& [keyword, mode] : keywords) {
      std::uint32_t n = 0;
      if (mode == MatchMode::Token) {
        for (const auto& t : tokens) {
          if (t == keyword) ++n;
        }
      } else {
        for (const auto& t : tokens) {
          if (contains(t, keyword)) ++n;
        }
      }
      if (n > 0) hits[keyword] += n;
    }
  }
  return hits;
}

void LabelPolicy::validate() const {
  if (abnormal_min_unique_keywords <= normal_max_unique_keywords) {
    throw DataError("label policy requires abnormal_min > normal_max");
  }
}

model::SessionLabel label_session(const model::Session& session, const LabelPolicy& policy) {
  policy.validate();
  const std::size_t unique = session.keyword_hits.size();
  if (unique >= policy.abnormal_min_unique_keywords) return model::SessionLabel::Abnormal;
  if (unique <= policy.normal_max_unique_keywords) return model::SessionLabel::Normal;
  return model::SessionLabel::Abstained;
}

std::vector<RegexRule> load_regex_rules(const std::string& path) {
  std::vector<RegexRule> rules;
  for (const auto& row : read_csv(path)) {
    if (row.size() < 4) throw DataError("regex table row needs technique_id, technique_name, tactic, pattern");
    if (row[0] == "technique_id") continue;
    RegexRule r;
    r.technique_id = trim(row[0]);
    r.technique_name = trim(row[1]);
    r.tactic = trim(row[2]);
    r.pattern = row[3];
    if (!std::regex_match(r.technique_id, kTechniqueIdRe)) {
      throw DataError("bad technique id in regex table: " + r.technique_id);
    }
    try {
      std::regex probe(r.pattern);
    } catch (const std::regex_error& e) {
      throw DataError("pattern for " + r.technique_id + " (" + r.technique_name + ") does not compile: " + e.what());
    }
    rules.push_back(std::move(r));
  }
  if (rules.empty()) throw DataError("regex table is empty: " + path);
  return rules;
}

std::vector<model::TechniqueTag> annotate_techniques(const model::Session& session,
                                                     const std::vector<RegexRule>& rules) {
  std::vector<std::pair<const RegexRule*, std::regex>> compiled;
  compiled.reserve(rules.size());
  for (const auto& r : rules) compiled.emplace_back(&r, std::regex(r.pattern));

  std::vector<model::TechniqueTag> tags;
  for (std::size_t i = 0; i < session.commands.size(); ++i) {
    const std::string& text = session.commands[i].text;
    std::set<std::string> seen;  // one tag per technique per command
    for (const auto& [rule, re] : compiled) {
      std::smatch m;
      if (std::regex_search(text, m, re) && seen.insert(rule->technique_id).second) {
        tags.push_back({rule->technique_id, rule->technique_name, i, m.str()});
      }
    }
  }
  std::sort(tags.begin(), tags.end(), [](const model::TechniqueTag& a, const model::TechniqueTag& b) {
    return std::tie(a.command_index, a.technique_id) < std::tie(b.command_index, b.technique_id);
  });
  return tags;
}

std::string render_annotated(const model::Session& session) {
  std::string out = "Activity id = " + session.session_id + ".";
  if (session.anomaly) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", session.anomaly->ensemble_score);
    out += " Anomaly score = ";
    out += buf;
    out += ".";
  }
  out += " Suspicious keywords = [";
  bool first = true;
  for (const auto& [kw, count] : session.keyword_hits) {
    if (!first) out += ", ";
    out += kw + ": " + std::to_string(count);
    first = false;
  }
  out += "]\n";

  std::size_t line_no = 0;
  for (std::size_t i = 0; i < session.commands.size(); ++i) {
    out += std::to_string(++line_no) + "  " + session.commands[i].text + "\n";
    std::vector<const model::TechniqueTag*> here;
    for (const auto& t : session.tags) {
      if (t.command_index == i) here.push_back(&t);
    }
    if (!here.empty()) {
      out += std::to_string(++line_no) + "  -> [";
      for (std::size_t k = 0; k < here.size(); ++k) {
        if (k) out += ", ";
        out += here[k]->technique_id + ": " + here[k]->technique_name;
      }
      out += "]\n";
    }
  }
  return out;
}

std::map<std::string, std::size_t> technique_histogram(const std::vector<model::Session>& sessions) {
  std::map<std::string, std::size_t> hist;
  for (const auto& s : sessions) {
    std::set<std::string> uniq;
    for (const auto& t : s.tags) uniq.insert(t.technique_id);
    for (const auto& id : uniq) ++hist[id];
  }
  return hist;
}

std::map<std::string, std::size_t> tactic_histogram(const std::vector<model::Session>& sessions,
                                                    const std::vector<RegexRule>& rules) {
  std::map<std::string, std::string> tactic_of;
  for (const auto& r : rules) tactic_of[r.technique_id] = r.tactic;
  std::map<std::string, std::size_t> hist;
  for (const auto& s : sessions) {
    std::set<std::string> uniq;
    for (const auto& t : s.tags) {
      const auto it = tactic_of.find(t.technique_id);
      if (it != tactic_of.end()) uniq.insert(it->second);
    }
    for (const auto& tac : uniq) ++hist[tac];
  }
  return hist;
}

}  // namespace shellscope::tagging
