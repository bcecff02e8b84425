#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "shellscope/cleaner.hpp"
#include "shellscope/generator.hpp"
#include "shellscope/parser.hpp"
#include "shellscope/tagging.hpp"

using namespace shellscope;
using namespace shellscope::synth;

namespace {

const std::vector<tagging::KeywordRule>& keyword_rules() {
  static const auto rules =
      tagging::load_keyword_rules(std::string(SHELLSCOPE_RULE_DATA_DIR) + "/suspicious_keywords.csv");
  return rules;
}

parser::PromptRule prompt_rule() {
  return parser::load_prompt_rule(std::string(SHELLSCOPE_RULE_DATA_DIR) + "/common_commands.txt");
}

}  // namespace

TEST_CASE("generation is deterministic given the seed") {
  GeneratorConfig cfg;
  cfg.num_activities = 40;
  cfg.seed = 12;
  const auto [a1, t1] = generate(cfg, keyword_rules());
  const auto [a2, t2] = generate(cfg, keyword_rules());
  CHECK(a1 == a2);
  REQUIRE(t1.entries.size() == t2.entries.size());
  for (std::size_t i = 0; i < t1.entries.size(); ++i) {
    CHECK(t1.entries[i].commands == t2.entries[i].commands);
    CHECK(t1.entries[i].planted_keywords == t2.entries[i].planted_keywords);
  }

  GeneratorConfig other = cfg;
  other.seed = 13;
  const auto [a3, t3] = generate(other, keyword_rules());
  CHECK(a1 != a3);
}

TEST_CASE("planted-abnormal count stays inside the binomial 99% interval") {
  GeneratorConfig cfg;
  cfg.num_activities = 1000;
  cfg.suspicious_injection_rate = 0.1;
  cfg.abstained_injection_rate = 0.0;
  cfg.no_prompt_probability = 0.0;
  cfg.seed = 2024;
  const auto [activities, truth] = generate(cfg, keyword_rules());
  std::size_t abnormal = 0;
  for (const auto& e : truth.entries) abnormal += e.planted_label == model::SessionLabel::Abnormal;
  // n=1000, p=0.1: mean 100, sigma 9.49, z(0.995)=2.576 -> [76, 124]
  CHECK(abnormal >= 76);
  CHECK(abnormal <= 124);
}

TEST_CASE("wrap probability zero means no continuation lines") {
  GeneratorConfig cfg;
  cfg.num_activities = 60;
  cfg.wrap_probability = 0.0;
  cfg.seed = 5;
  const auto [activities, truth] = generate(cfg, keyword_rules());
  for (const auto& a : activities) {
    for (const auto& line : a.lines) {
      CHECK_FALSE(line.ends_with('\\'));
    }
  }
}

TEST_CASE("benign material is keyword-free end to end") {
  GeneratorConfig cfg;
  cfg.num_activities = 120;
  cfg.suspicious_injection_rate = 0.0;
  cfg.abstained_injection_rate = 0.0;
  cfg.seed = 31;
  const auto [activities, truth] = generate(cfg, keyword_rules());
  const auto [sessions, stats] = parser::parse_corpus(activities, prompt_rule());
  const auto cc = cleaner::CleaningConfig::defaults();
  for (const auto& session : sessions) {
    auto stripped = cleaner::strip_subshells(session, cleaner::default_subshell_patterns());
    if (!stripped) continue;
    const auto cleaned = cleaner::clean_session(std::move(*stripped), cc);
    if (!cleaned) continue;
    const auto hits = tagging::match_keywords(*cleaned, keyword_rules());
    CHECK_MESSAGE(hits.empty(), "session ", session.session_id, " hit ",
                  hits.empty() ? "" : hits.begin()->first);
  }
}

TEST_CASE("planted labels survive the parse-clean-label pipeline exactly") {
  GeneratorConfig cfg;
  cfg.num_activities = 300;
  cfg.suspicious_injection_rate = 0.15;
  cfg.abstained_injection_rate = 0.1;
  cfg.seed = 77;
  const auto [activities, truth] = generate(cfg, keyword_rules());
  const auto [sessions, stats] = parser::parse_corpus(activities, prompt_rule());
  const auto cc = cleaner::CleaningConfig::defaults();
  const tagging::LabelPolicy policy;

  std::size_t checked = 0;
  for (const auto& session : sessions) {
    auto stripped = cleaner::strip_subshells(session, cleaner::default_subshell_patterns());
    REQUIRE(stripped.has_value());
    auto cleaned = cleaner::clean_session(std::move(*stripped), cc);
    REQUIRE(cleaned.has_value());
    cleaned->keyword_hits = tagging::match_keywords(*cleaned, keyword_rules());
    const auto label = tagging::label_session(*cleaned, policy);

    const auto* gt = truth.find(session.session_id);
    REQUIRE(gt != nullptr);
    CHECK_MESSAGE(label == gt->planted_label, "session ", session.session_id);

    // planted keyword sets are recovered exactly
    std::set<std::string> found;
    for (const auto& [kw, n] : cleaned->keyword_hits) found.insert(kw);
    CHECK(found == std::set<std::string>(gt->planted_keywords.begin(), gt->planted_keywords.end()));
    ++checked;
  }
  CHECK(checked > 250);
}

TEST_CASE("in-grammar extraction is exact: precision = recall = 1") {
  GeneratorConfig cfg;
  cfg.num_activities = 150;
  cfg.editor_probability = 0.0;  // the in-grammar subset has no editor buffers
  cfg.seed = 404;
  const auto [activities, truth] = generate(cfg, keyword_rules());
  const auto rule = prompt_rule();

  std::size_t extracted_total = 0, truth_total = 0, matched = 0;
  for (const auto& a : activities) {
    const auto* gt = truth.find(a.activity_id);
    REQUIRE(gt != nullptr);
    const auto prompts = parser::detect_prompts(a, rule);
    std::vector<std::string> got;
    if (const auto session = parser::extract_commands(a, prompts, rule)) {
      for (const auto& c : session->commands) got.push_back(c.text);
    }
    truth_total += gt->commands.size();
    extracted_total += got.size();
    // order-sensitive exact match of the full sequence
    if (got == gt->commands) matched += got.size();
  }
  REQUIRE(truth_total > 0);
  CHECK(extracted_total == truth_total);
  CHECK(matched == truth_total);
}

TEST_CASE("detected prompts match the planted prompts") {
  GeneratorConfig cfg;
  cfg.num_activities = 80;
  cfg.seed = 55;
  const auto [activities, truth] = generate(cfg, keyword_rules());
  const auto rule = prompt_rule();
  for (const auto& a : activities) {
    const auto* gt = truth.find(a.activity_id);
    if (gt->commands.empty()) continue;
    const auto prompts = parser::detect_prompts(a, rule);
    std::set<std::string> found;
    for (const auto& p : prompts) found.insert(p.prompt_text);
    for (const auto& planted : gt->prompts) {
      CHECK_MESSAGE(found.count(planted) == 1, "missing prompt '", planted, "' in ", a.activity_id);
    }
  }
}

TEST_CASE("ground truth survives its file round trip") {
  GeneratorConfig cfg;
  cfg.num_activities = 25;
  cfg.seed = 9;
  const auto [activities, truth] = generate(cfg, keyword_rules());
  const auto dir = std::filesystem::temp_directory_path() / "shellscope_gen_tests";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "truth.jsonl").string();
  save_ground_truth(truth, path);
  const auto back = load_ground_truth(path);
  REQUIRE(back.entries.size() == truth.entries.size());
  for (std::size_t i = 0; i < truth.entries.size(); ++i) {
    CHECK(back.entries[i].activity_id == truth.entries[i].activity_id);
    CHECK(back.entries[i].commands == truth.entries[i].commands);
    CHECK(back.entries[i].planted_label == truth.entries[i].planted_label);
    CHECK(back.entries[i].planted_keywords == truth.entries[i].planted_keywords);
    CHECK(back.entries[i].has_subshell == truth.entries[i].has_subshell);
  }
}

TEST_CASE("subshell ground truth marks the stripped fragment range") {
  GeneratorConfig cfg;
  cfg.num_activities = 200;
  cfg.subshell_probability = 0.5;
  cfg.seed = 66;
  const auto [activities, truth] = generate(cfg, keyword_rules());
  const auto rule = prompt_rule();

  std::size_t sql_checked = 0;
  for (const auto& a : activities) {
    const auto* gt = truth.find(a.activity_id);
    if (!gt->has_subshell || gt->subshell_len == 0) continue;  // python subshells leave no commands
    const auto prompts = parser::detect_prompts(a, rule);
    const auto session = parser::extract_commands(a, prompts, rule);
    REQUIRE(session.has_value());

    std::vector<cleaner::SubshellFragment> fragments;
    const auto stripped =
        cleaner::strip_subshells(*session, cleaner::default_subshell_patterns(), &fragments);
    REQUIRE(stripped.has_value());
    REQUIRE(fragments.size() == 1);
    CHECK(fragments[0].commands.size() == gt->subshell_len);
    for (std::size_t k = 0; k < fragments[0].commands.size(); ++k) {
      CHECK(fragments[0].commands[k].text == gt->commands[gt->subshell_start + k]);
    }
    ++sql_checked;
  }
  CHECK(sql_checked > 10);
}
