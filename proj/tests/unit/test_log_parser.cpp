#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "shellscope/generator.hpp"
#include "shellscope/parser.hpp"
#include "shellscope/tagging.hpp"

using namespace shellscope;
using namespace shellscope::parser;

namespace {

PromptRule test_rule() {
  PromptRule rule;
  rule.common_commands = {"ls", "cat", "echo", "tar", "vi", "grep", "exit", "cd", "pwd"};
  rule.finalize();
  return rule;
}

model::RawActivity activity(std::vector<std::string> lines) {
  model::RawActivity a;
  a.activity_id = "act";
  a.lines = std::move(lines);
  return a;
}

std::vector<tagging::KeywordRule> shipped_keywords() {
  return tagging::load_keyword_rules(std::string(SHELLSCOPE_RULE_DATA_DIR) + "/suspicious_keywords.csv");
}

}  // namespace

TEST_CASE("prompt detected when the word after the first terminal symbol is a common command") {
  const auto prompts = detect_prompts(activity({"[user@host ~]$ ls -la"}), test_rule());
  REQUIRE(prompts.size() == 1);
  CHECK(prompts[0].prompt_text == "[user@host ~]$");
  CHECK(prompts[0].first_seen_line == 0);
}

TEST_CASE("environment variable lines yield no prompt") {
  CHECK(detect_prompts(activity({"export PATH=$HOME/bin"}), test_rule()).empty());
  // even when a common command follows the symbol, an assignment prefix is
  // not a prompt
  CHECK(detect_prompts(activity({"FOO=bar$ ls"}), test_rule()).empty());
}

TEST_CASE("time prefixes are stripped before prompt detection") {
  const auto prompts = detect_prompts(activity({"12:01:33 host:~# cat file"}), test_rule());
  REQUIRE(prompts.size() == 1);
  CHECK(prompts[0].prompt_text == "host:~#");
}

TEST_CASE("bracketed and ISO timestamps are stripped too") {
  CHECK(strip_time_prefix("[10:20:30] x") == "x");
  CHECK(strip_time_prefix("2024-03-01T10:20:30Z x") == "x");
  CHECK(strip_time_prefix("2024-03-01 10:20:30 x") == "x");
  CHECK(strip_time_prefix("10:20:30.125 x") == "x");
  CHECK(strip_time_prefix("not a time 10:20:30 x") == "not a time 10:20:30 x");
  CHECK(strip_time_prefix("10:20:30") == "10:20:30");  // nothing follows
}

TEST_CASE("prompts with unbalanced brackets are rejected") {
  CHECK(detect_prompts(activity({"[user@host ~]]$ ls"}), test_rule()).empty());
  CHECK(detect_prompts(activity({"(broken[$ ls"}), test_rule()).empty());
}

TEST_CASE("over-long prompt candidates are rejected") {
  PromptRule rule = test_rule();
  rule.max_prompt_length = 8;
  CHECK(detect_prompts(activity({"averyveryverylongprompt$ ls"}), rule).empty());
}

TEST_CASE("extraction counts output lines and flags error output") {
  const auto act = activity({"P$ echo hi", "hi", "P$ cat missing", "cat: missing: No such file or directory"});
  const auto prompts = detect_prompts(act, test_rule());
  const auto session = extract_commands(act, prompts, test_rule());
  REQUIRE(session.has_value());
  REQUIRE(session->commands.size() == 2);
  CHECK(session->commands[0].text == "echo hi");
  CHECK(session->commands[0].output_line_count == 1);
  CHECK_FALSE(session->commands[0].had_error_output);
  CHECK(session->commands[1].had_error_output);
}

TEST_CASE("wrapped commands are joined across continuation lines") {
  const auto act = activity({"P$ tar \\", "-xzf a.tgz"});
  const auto session = extract_commands(act, detect_prompts(act, test_rule()), test_rule());
  REQUIRE(session.has_value());
  REQUIRE(session->commands.size() == 1);
  CHECK(session->commands[0].text == "tar -xzf a.tgz");
}

TEST_CASE("editor buffers are excised until the next prompt") {
  std::vector<std::string> lines = {"P$ vi f"};
  for (int i = 0; i < 20; ++i) lines.push_back("buffer line " + std::to_string(i));
  lines.push_back("P$ ls");
  const auto act = activity(lines);
  ParserStats stats;
  const auto session = extract_commands(act, detect_prompts(act, test_rule()), test_rule(), &stats);
  REQUIRE(session.has_value());
  REQUIRE(session->commands.size() == 2);
  CHECK(session->commands[0].text == "vi f");
  CHECK(session->commands[1].text == "ls");
  CHECK(stats.buffer_lines_excised == 20);
}

TEST_CASE("activity with prompts but no commands is an empty session") {
  const auto act = activity({"P$ ls", "P$ "});
  auto prompts = detect_prompts(act, test_rule());
  REQUIRE_FALSE(prompts.empty());
  // a crafted prompt list with no matching command lines
  const auto other = activity({"no prompt here", "still none"});
  CHECK_FALSE(extract_commands(other, prompts, test_rule()).has_value());
}

TEST_CASE("parse_corpus drops unparsable activities and dedupes") {
  std::vector<model::RawActivity> corpus;
  corpus.push_back(activity({"P$ ls", "out"}));
  corpus.push_back(activity({"just output, no prompt"}));
  corpus.push_back(activity({"P$ ls", "out"}));  // duplicate command text
  corpus[0].activity_id = "a0";
  corpus[1].activity_id = "a1";
  corpus[2].activity_id = "a2";

  const auto [sessions, stats] = parse_corpus(corpus, test_rule());
  CHECK(sessions.size() == 1);
  CHECK(stats.activities_in == 3);
  CHECK(stats.activities_without_prompt == 1);
  CHECK(stats.duplicates_removed == 1);
  CHECK(stats.sessions_out == 1);
}

TEST_CASE("multiple prompts within one activity are all detected and used") {
  const auto act = activity({"[u@h src]$ ls", "[u@h docs]$ cat readme", "body"});
  const auto prompts = detect_prompts(act, test_rule());
  CHECK(prompts.size() == 2);
  const auto session = extract_commands(act, prompts, test_rule());
  REQUIRE(session.has_value());
  REQUIRE(session->commands.size() == 2);
  CHECK(session->commands[1].text == "cat readme");
  CHECK(session->commands[1].output_line_count == 1);
}

// ---- properties on generated corpora ----------------------------------

TEST_CASE("generated corpora parse deterministically and commands re-prefix onto raw lines") {
  synth::GeneratorConfig gc;
  gc.num_activities = 60;
  gc.seed = 99;
  const auto rules = shipped_keywords();
  const auto [activities, truth] = synth::generate(gc, rules);

  PromptRule rule = load_prompt_rule(std::string(SHELLSCOPE_RULE_DATA_DIR) + "/common_commands.txt");

  const auto [sessions1, stats1] = parse_corpus(activities, rule);
  const auto [sessions2, stats2] = parse_corpus(activities, rule);
  CHECK(sessions1 == sessions2);  // determinism, field for field

  // every command re-prefixed with one of its prompts matches some raw line
  // (modulo time stripping and continuation joins)
  for (const auto& session : sessions1) {
    const auto* gt = truth.find(session.session_id);
    REQUIRE(gt != nullptr);
    for (const auto& cmd : session.commands) {
      bool found = false;
      for (const auto& prompt : session.prompts) {
        const std::string want = prompt + " " + cmd.text;
        for (const auto& entry : activities) {
          if (entry.activity_id != session.session_id) continue;
          for (const auto& raw : entry.lines) {
            const std::string stripped = strip_time_prefix(raw);
            std::string flat = stripped;
            if (flat.ends_with('\\')) flat.pop_back();
            if (want.rfind(flat.substr(0, flat.find_last_not_of(' ') + 1), 0) == 0) found = true;
          }
        }
      }
      CHECK_MESSAGE(found, "command '", cmd.text, "' does not re-prefix onto any raw line");
    }
  }

  // no extracted command starts with one of its session's prompts
  for (const auto& session : sessions1) {
    for (const auto& cmd : session.commands) {
      for (const auto& prompt : session.prompts) {
        CHECK_FALSE(cmd.text.starts_with(prompt));
      }
    }
  }
}
