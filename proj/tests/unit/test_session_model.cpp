#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "shellscope/corpus_io.hpp"
#include "shellscope/errors.hpp"
#include "shellscope/session.hpp"

using namespace shellscope;
using namespace shellscope::model;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "shellscope_session_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

Session make_session(const std::string& id, std::vector<std::string> cmds) {
  Session s;
  s.session_id = id;
  for (auto& c : cmds) s.commands.push_back({std::move(c), 0, false});
  return s;
}

}  // namespace

TEST_CASE("read_activities yields records in file order") {
  const auto path = temp_path("ok.jsonl");
  {
    std::ofstream out(path);
    out << R"({"activity_id":"a1","lines":["x","y"]})" << "\n";
    out << R"({"activity_id":"a2","lines":[],"captured_at":"2024-01-02T03:04:05Z"})" << "\n";
  }
  const auto activities = read_activities(path);
  REQUIRE(activities.size() == 2);
  CHECK(activities[0].activity_id == "a1");
  CHECK(activities[0].lines == std::vector<std::string>{"x", "y"});
  CHECK_FALSE(activities[0].captured_at.has_value());
  CHECK(activities[1].captured_at.value() == "2024-01-02T03:04:05Z");
}

TEST_CASE("record missing lines field errors with its line number") {
  const auto path = temp_path("missing.jsonl");
  {
    std::ofstream out(path);
    out << R"({"activity_id":"a1","lines":["x"]})" << "\n";
    out << R"({"activity_id":"a2"})" << "\n";
  }
  try {
    read_activities(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(e.line_no() == 2);
  }
}

TEST_CASE("empty file is an empty stream, not an error") {
  const auto path = temp_path("empty.jsonl");
  std::ofstream(path).close();
  CHECK(read_activities(path).empty());
}

TEST_CASE("duplicate activity ids are rejected") {
  const auto path = temp_path("dup.jsonl");
  {
    std::ofstream out(path);
    out << R"({"activity_id":"a1","lines":[]})" << "\n";
    out << R"({"activity_id":"a1","lines":[]})" << "\n";
  }
  CHECK_THROWS_AS(read_activities(path), DataError);
}

TEST_CASE("invalid UTF-8 bytes become U+FFFD and are counted") {
  const auto path = temp_path("utf8.jsonl");
  {
    std::ofstream out(path, std::ios::binary);
    out << "{\"activity_id\":\"a1\",\"lines\":[\"ab\xFF" "cd\"]}\n";
  }
  ReadStats stats;
  const auto activities = read_activities(path, &stats);
  REQUIRE(activities.size() == 1);
  CHECK(stats.utf8_replacements == 1);
  CHECK(activities[0].lines[0] == "ab\xEF\xBF\xBD" "cd");
}

TEST_CASE("session round-trip is lossless for every field") {
  Session s = make_session("s1", {"ls -la", "cat x"});
  s.commands[0].output_line_count = 3;
  s.commands[1].had_error_output = true;
  s.prompts = {"host$"};
  s.tags.push_back({"T1105", "Ingress Tool Transfer", 1, "wget"});
  s.keyword_hits = {{"wget", 2}, {"kill", 1}};
  s.label = SessionLabel::Abnormal;
  AnomalyRecord rec;
  rec.per_detector_raw = {{"pca", 1.5}, {"iforest", 0.7}, {"copod", 9.0}, {"autoencoder", 2.0}};
  rec.per_detector_normalized = {{"pca", 1.0}, {"iforest", -1.0}, {"copod", 2.0}, {"autoencoder", 0.5}};
  rec.ensemble_score = 0.625;
  s.anomaly = rec;
  s.cycles.push_back({0, 1, 4});

  const auto path = temp_path("roundtrip.jsonl");
  write_sessions({s}, path);
  const auto back = read_sessions(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0] == s);
}

TEST_CASE("writing a session without commands is a validation error") {
  Session s;
  s.session_id = "empty";
  CHECK_THROWS_AS(write_sessions({s}, temp_path("invalid.jsonl")), DataError);
}

TEST_CASE("ensemble score must be the mean of the normalized scores") {
  Session s = make_session("s1", {"ls"});
  AnomalyRecord rec;
  rec.per_detector_normalized = {{"pca", 1.0}, {"iforest", 1.0}, {"copod", 1.0}, {"autoencoder", 1.0}};
  rec.ensemble_score = 0.9;  // off by 0.1
  s.anomaly = rec;
  CHECK_THROWS_AS(write_sessions({s}, temp_path("badmean.jsonl")), DataError);
}

TEST_CASE("a file from a newer schema version raises a version error") {
  const auto path = temp_path("newer.jsonl");
  {
    std::ofstream out(path);
    out << R"({"schema_version":99,"session_id":"s1","commands":[{"text":"ls"}]})" << "\n";
  }
  try {
    read_sessions(path);
    FAIL("expected SchemaVersionError");
  } catch (const SchemaVersionError& e) {
    CHECK(e.found() == 99);
  }
}

TEST_CASE("dedupe keeps the first of identical command sequences") {
  auto out = dedupe_sessions({make_session("a", {"x", "y"}), make_session("b", {"x", "y"}),
                              make_session("c", {"z"})});
  REQUIRE(out.size() == 2);
  CHECK(out[0].session_id == "a");
  CHECK(out[1].session_id == "c");
}

TEST_CASE("dedupe of distinct sessions is a no-op") {
  auto out = dedupe_sessions({make_session("a", {"x"}), make_session("b", {"y"})});
  CHECK(out.size() == 2);
}

TEST_CASE("a thousand copies collapse to one") {
  std::vector<Session> sessions;
  for (int i = 0; i < 1000; ++i) sessions.push_back(make_session("s" + std::to_string(i), {"ls", "pwd"}));
  std::size_t removed = 0;
  auto out = dedupe_sessions(std::move(sessions), &removed);
  CHECK(out.size() == 1);
  CHECK(removed == 999);
}

TEST_CASE("dedupe is idempotent") {
  std::vector<Session> sessions = {make_session("a", {"x"}), make_session("b", {"x"}),
                                   make_session("c", {"y"})};
  const auto once = dedupe_sessions(sessions);
  const auto twice = dedupe_sessions(once);
  CHECK(once == twice);
}
