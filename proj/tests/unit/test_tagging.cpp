#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "shellscope/errors.hpp"
#include "shellscope/rng.hpp"
#include "shellscope/tagging.hpp"

using namespace shellscope;
using namespace shellscope::tagging;

namespace {

const std::string kKeywordTable = std::string(SHELLSCOPE_RULE_DATA_DIR) + "/suspicious_keywords.csv";
const std::string kRegexTable = std::string(SHELLSCOPE_RULE_DATA_DIR) + "/technique_regex.csv";

model::Session session_of(std::vector<std::string> cmds) {
  model::Session s;
  s.session_id = "s";
  for (auto& c : cmds) s.commands.push_back({std::move(c), 0, false});
  return s;
}

const std::vector<KeywordRule>& keyword_rules() {
  static const auto rules = load_keyword_rules(kKeywordTable);
  return rules;
}

const std::vector<RegexRule>& regex_rules() {
  static const auto rules = load_regex_rules(kRegexTable);
  return rules;
}

}  // namespace

TEST_CASE("the shipped keyword table covers twenty techniques") {
  std::set<std::string> ids;
  for (const auto& r : keyword_rules()) ids.insert(r.technique_id);
  CHECK(ids.size() == 20);
}

TEST_CASE("commands match as whole tokens") {
  const auto hits = match_keywords(session_of({"sudo whoami"}), keyword_rules());
  REQUIRE(hits.size() == 2);
  CHECK(hits.at("sudo") == 1);
  CHECK(hits.at("whoami") == 1);
}

TEST_CASE("keywords never match inside larger words") {
  CHECK(match_keywords(session_of({"wholesale report"}), keyword_rules()).empty());
  CHECK(match_keywords(session_of({"swget thing"}), keyword_rules()).empty());
  CHECK(match_keywords(session_of({"weather"}), keyword_rules()).empty());  // 'w' needs its own token
}

TEST_CASE("occurrences are counted across separators") {
  const auto hits = match_keywords(session_of({"curl a; curl b"}), keyword_rules());
  REQUIRE(hits.size() == 1);
  CHECK(hits.at("curl") == 2);
}

TEST_CASE("file and variable keywords match as substrings of a token") {
  CHECK(match_keywords(session_of({"cat /etc/passwd"}), keyword_rules()).at("passwd") == 1);
  CHECK(match_keywords(session_of({"unset HISTFILE"}), keyword_rules()).at("HISTFILE") == 1);
  CHECK(match_keywords(session_of({"grep x /etc/hosts"}), keyword_rules()).at("hosts") == 1);
  CHECK(match_keywords(session_of({"rm -f .bash_history"}), keyword_rules()).at(".bash_history") == 1);
}

TEST_CASE("matching is case-sensitive") {
  CHECK(match_keywords(session_of({"SUDO thing"}), keyword_rules()).empty());
  CHECK(match_keywords(session_of({"Kill -9 4"}), keyword_rules()).empty());
}

TEST_CASE("labeling follows the unique-keyword thresholds") {
  LabelPolicy policy;
  model::Session s = session_of({"x"});

  s.keyword_hits = {{"kill", 3}, {"wget", 21}};
  CHECK(label_session(s, policy) == model::SessionLabel::Abstained);

  s.keyword_hits = {};
  CHECK(label_session(s, policy) == model::SessionLabel::Normal);

  s.keyword_hits = {{"chmod", 2}, {"df", 1}, {"wget", 1}};
  CHECK(label_session(s, policy) == model::SessionLabel::Abnormal);
}

TEST_CASE("labeling is a trichotomy") {
  LabelPolicy policy;
  Rng rng(5);
  const std::vector<std::string> kws = {"kill", "wget", "sudo", "chmod", "df", "arp", "curl"};
  std::size_t normal = 0, abnormal = 0, abstained = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    model::Session s = session_of({"x"});
    const std::size_t n = rng.uniform_below(6);
    for (std::size_t k = 0; k < n; ++k) {
      s.keyword_hits[kws[rng.uniform_below(kws.size())]] += 1;
    }
    switch (label_session(s, policy)) {
      case model::SessionLabel::Normal:
        ++normal;
        break;
      case model::SessionLabel::Abnormal:
        ++abnormal;
        break;
      case model::SessionLabel::Abstained:
        ++abstained;
        break;
      default:
        FAIL("labeling returned Unlabeled");
    }
  }
  CHECK(normal + abnormal + abstained == trials);
}

TEST_CASE("policy with abnormal_min <= normal_max is invalid") {
  LabelPolicy bad;
  bad.abnormal_min_unique_keywords = 1;
  bad.normal_max_unique_keywords = 1;
  CHECK_THROWS_AS(label_session(session_of({"x"}), bad), DataError);
}

TEST_CASE("ingress tool transfer is tagged on wget commands") {
  const auto tags = annotate_techniques(session_of({"cd /data;wget http://host/payload"}), regex_rules());
  REQUIRE(tags.size() == 1);
  CHECK(tags[0].technique_id == "T1105");
  CHECK(tags[0].technique_name == "Ingress Tool Transfer");
  CHECK(tags[0].command_index == 0);
}

TEST_CASE("a kill pipeline carries process discovery and service stop") {
  const auto tags = annotate_techniques(
      session_of({"ps aux | grep '[S]impleHTTPServer' | awk '{print $2}' |xargs kill -9"}), regex_rules());
  std::set<std::string> ids;
  for (const auto& t : tags) ids.insert(t.technique_id);
  CHECK(ids == std::set<std::string>{"T1057", "T1489"});
}

TEST_CASE("benign commands carry no tags") {
  CHECK(annotate_techniques(session_of({"ls -la", "make clean"}), regex_rules()).empty());
}

TEST_CASE("annotation is idempotent and rule-order independent") {
  const auto s = session_of({"sudo cat /etc/shadow", "wget http://x/y", "ls"});
  const auto tags1 = annotate_techniques(s, regex_rules());
  const auto tags2 = annotate_techniques(s, regex_rules());
  CHECK(tags1 == tags2);

  auto shuffled = regex_rules();
  Rng rng(17);
  rng.shuffle(shuffled);
  CHECK(annotate_techniques(s, shuffled) == tags1);
}

TEST_CASE("a pattern that does not compile names its rule at load time") {
  const auto dir = std::filesystem::temp_directory_path() / "shellscope_tag_tests";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "bad.csv").string();
  {
    std::ofstream out(path);
    out << "technique_id,technique_name,tactic,pattern\n";
    out << "T9999,Broken Rule,Discovery,\"(unclosed\"\n";
  }
  try {
    load_regex_rules(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("T9999") != std::string::npos);
    CHECK(std::string(e.what()).find("Broken Rule") != std::string::npos);
  }
}

TEST_CASE("rendering places tag lines after their commands") {
  model::Session s = session_of({"salt cmd.run \"wget http://host/file\"", "ls"});
  s.session_id = "*1e1BD9";
  s.keyword_hits = {{"kill", 3}, {"wget", 21}};
  model::AnomalyRecord rec;
  rec.per_detector_normalized = {{"pca", 1.8919}, {"iforest", 1.8919}, {"copod", 1.8919}, {"autoencoder", 1.8919}};
  rec.ensemble_score = 1.8919;
  s.anomaly = rec;
  s.tags = annotate_techniques(s, regex_rules());

  const std::string text = render_annotated(s);
  CHECK(text.find("Activity id = *1e1BD9. Anomaly score = 1.8919. "
                  "Suspicious keywords = [kill: 3, wget: 21]") == 0);
  CHECK(text.find("2  -> [T1105: Ingress Tool Transfer]") != std::string::npos);
}

TEST_CASE("untagged sessions render the header and body only") {
  model::Session s = session_of({"ls -l"});
  const std::string text = render_annotated(s);
  CHECK(text == "Activity id = s. Suspicious keywords = []\n1  ls -l\n");
}

TEST_CASE("technique histogram counts sessions, not occurrences") {
  auto s1 = session_of({"wget a", "wget b"});
  s1.tags = annotate_techniques(s1, regex_rules());
  auto s2 = session_of({"wget c"});
  s2.session_id = "s2";
  s2.tags = annotate_techniques(s2, regex_rules());
  const auto hist = technique_histogram({s1, s2});
  CHECK(hist.at("T1105") == 2);

  CHECK(technique_histogram({session_of({"ls"})}).empty());
}

TEST_CASE("tactics roll up through the shipped mapping") {
  auto s = session_of({"wget a", "sudo id"});
  s.tags = annotate_techniques(s, regex_rules());
  const auto hist = tactic_histogram({s}, regex_rules());
  CHECK(hist.at("Command and Control") == 1);
  CHECK(hist.at("Privilege Escalation") == 1);
  CHECK(hist.at("Discovery") == 1);  // id -> T1087
}
