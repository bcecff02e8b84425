#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "shellscope/cleaner.hpp"
#include "shellscope/errors.hpp"
#include "shellscope/rng.hpp"

using namespace shellscope;
using namespace shellscope::cleaner;

namespace {

model::Session session_of(std::vector<std::string> cmds) {
  model::Session s;
  s.session_id = "s";
  for (auto& c : cmds) s.commands.push_back({std::move(c), 0, false});
  return s;
}

std::vector<std::string> texts_of(const model::Session& s) {
  std::vector<std::string> out;
  for (const auto& c : s.commands) out.push_back(c.text);
  return out;
}

// Brute-force smallest-period collapse used as the oracle: at each position
// try periods in increasing order, count literal repeats, collapse when the
// count reaches min_repeats; iterate to a fixed point. Written directly from
// the rule, independent of the production code.
std::vector<std::string> oracle_collapse(std::vector<std::string> seq, std::uint32_t min_repeats) {
  while (true) {
    bool changed = false;
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < seq.size()) {
      bool done = false;
      for (std::size_t p = 1; !done && i + p * min_repeats <= seq.size(); ++p) {
        std::uint32_t reps = 1;
        while (true) {
          const std::size_t next = i + reps * p;
          if (next + p > seq.size()) break;
          bool same = true;
          for (std::size_t k = 0; k < p; ++k) {
            if (seq[i + k] != seq[next + k]) same = false;
          }
          if (!same) break;
          ++reps;
        }
        if (reps >= min_repeats) {
          for (std::size_t k = 0; k < p; ++k) out.push_back(seq[i + k]);
          i += reps * p;
          done = true;
          changed = true;
        }
      }
      if (!done) {
        out.push_back(seq[i]);
        ++i;
      }
    }
    seq = std::move(out);
    if (!changed) break;
  }
  return seq;
}

// total character count; each mask token counts as one symbol
std::size_t char_count(const model::Session& s, const CleaningConfig& cfg) {
  std::size_t total = 0;
  for (const auto& c : s.commands) {
    std::string t = c.text;
    for (const std::string& mask : {cfg.number_mask_token, cfg.hex_mask_token}) {
      std::size_t pos = 0;
      while ((pos = t.find(mask, pos)) != std::string::npos) t.replace(pos, mask.size(), "*");
    }
    total += t.size();
  }
  return total;
}

}  // namespace

TEST_CASE("long space runs collapse to the configured maximum") {
  CleaningConfig cfg = CleaningConfig::defaults();
  cfg.max_consecutive_spaces = 1;
  const auto out = clean_session(session_of({"ls      -la"}), cfg);
  REQUIRE(out.has_value());
  CHECK(out->commands[0].text == "ls -la");
}

TEST_CASE("digit runs are masked individually, separators preserved") {
  CleaningConfig cfg = CleaningConfig::defaults();
  const auto out = clean_session(session_of({"ping 10.0.0.7"}), cfg);
  REQUIRE(out.has_value());
  CHECK(out->commands[0].text == "ping <NUM>.<NUM>.<NUM>.<NUM>");
}

TEST_CASE("over-repeated characters are truncated") {
  CHECK(collapse_char_repeats("grep aaaaaaa x", 3) == "grep aaa x");
  CHECK(collapse_char_repeats("ls", 3) == "ls");
}

TEST_CASE("hex blobs, UUIDs, hostnames and deep paths are masked") {
  CleaningConfig cfg = CleaningConfig::defaults();
  CHECK(apply_masks("cat deadbeef1234", cfg) == "cat <HEX>");
  CHECK(apply_masks("cat deadbeef", cfg) == "cat deadbeef");  // letters only: a word
  CHECK(apply_masks("echo 550e8400-e29b-41d4-a716-446655440000", cfg) == "echo <UUID>");
  CHECK(apply_masks("ping node.internal.example", cfg) == "ping <HOST>");
  CHECK(apply_masks("cat /a/b/c/d/e.txt", cfg) == "cat <PATH>");
  CHECK(apply_masks("cat /etc/passwd", cfg) == "cat /etc/passwd");  // shallow path survives
}

TEST_CASE("cyclic command blocks collapse to one period with an annotation") {
  CleaningConfig cfg = CleaningConfig::defaults();
  cfg.cycle_min_repeats = 3;
  const auto out = clean_session(session_of({"a", "b", "a", "b", "a", "b"}), cfg);
  REQUIRE(out.has_value());
  CHECK(texts_of(*out) == std::vector<std::string>{"a", "b"});
  REQUIRE(out->cycles.size() == 1);
  CHECK(out->cycles[0].start_index == 0);
  CHECK(out->cycles[0].period == 2);
  CHECK(out->cycles[0].repeats == 3);
}

TEST_CASE("cycle collapsing matches the brute-force oracle on short sequences") {
  Rng rng(4242);
  const std::vector<std::string> alphabet = {"a", "b", "c"};
  for (int trial = 0; trial < 300; ++trial) {
    const std::uint32_t min_repeats = trial % 2 == 0 ? 2 : 3;
    const std::size_t len = 1 + rng.uniform_below(32);
    std::vector<std::string> seq;
    for (std::size_t i = 0; i < len; ++i) seq.push_back(alphabet[rng.uniform_below(alphabet.size())]);

    std::vector<model::CommandLine> cmds;
    for (const auto& t : seq) cmds.push_back({t, 0, false});
    const auto [collapsed, notes] = collapse_cycles(cmds, min_repeats);
    std::vector<std::string> got;
    for (const auto& c : collapsed) got.push_back(c.text);

    CHECK_MESSAGE(got == oracle_collapse(seq, min_repeats), "trial ", trial);
    for (const auto& note : notes) {
      CHECK(note.start_index < collapsed.size());
    }
  }
}

TEST_CASE("error-flagged lines are dropped when configured") {
  CleaningConfig cfg = CleaningConfig::defaults();
  model::Session s = session_of({"good", "bad"});
  s.commands[1].had_error_output = true;
  CleanStats stats;
  const auto out = clean_session(s, cfg, &stats);
  REQUIRE(out.has_value());
  CHECK(texts_of(*out) == std::vector<std::string>{"good"});
  CHECK(stats.lines_dropped_error == 1);

  cfg.drop_error_lines = false;
  const auto kept = clean_session(s, cfg);
  CHECK(kept->commands.size() == 2);
}

TEST_CASE("command names failing the pattern drop the line only") {
  CleaningConfig cfg = CleaningConfig::defaults();
  CleanStats stats;
  const auto out = clean_session(session_of({"ls -l", "@@bogus arg"}), cfg, &stats);
  REQUIRE(out.has_value());
  CHECK(out->commands.size() == 1);
  CHECK(stats.lines_dropped_name_filter == 1);
}

TEST_CASE("editing artifacts with control bytes are dropped") {
  CleaningConfig cfg = CleaningConfig::defaults();
  CleanStats stats;
  const auto out = clean_session(session_of({"ls", std::string("broken\x08\x08text")}), cfg, &stats);
  REQUIRE(out.has_value());
  CHECK(out->commands.size() == 1);
  CHECK(stats.lines_dropped_artifact == 1);
}

TEST_CASE("a session emptied by cleaning signals EmptySession") {
  CleaningConfig cfg = CleaningConfig::defaults();
  model::Session s = session_of({"only"});
  s.commands[0].had_error_output = true;
  CleanStats stats;
  CHECK_FALSE(clean_session(s, cfg, &stats).has_value());
  CHECK(stats.sessions_emptied == 1);
}

TEST_CASE("cleaning is idempotent and never grows the session") {
  CleaningConfig cfg = CleaningConfig::defaults();
  Rng rng(777);
  const std::vector<std::string> pool = {
      "ls   -la",     "ping 10.0.0.7", "cat /a/b/c/d/e/f.log", "echo aaaaaaaaaa",
      "grep x y.txt", "tar -xzf a.tgz", "du -sh .",            "wc -l 192.168.0.10",
  };
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> cmds;
    const std::size_t len = 1 + rng.uniform_below(10);
    for (std::size_t i = 0; i < len; ++i) cmds.push_back(pool[rng.uniform_below(pool.size())]);
    // occasionally plant a literal cycle
    if (rng.bernoulli(0.4)) {
      for (int k = 0; k < 4; ++k) cmds.push_back("make");
    }
    const model::Session original = session_of(cmds);
    const auto once = clean_session(original, cfg);
    REQUIRE(once.has_value());
    const auto twice = clean_session(*once, cfg);
    REQUIRE(twice.has_value());
    CHECK(texts_of(*twice) == texts_of(*once));
    CHECK(char_count(*once, cfg) <= char_count(original, cfg));
  }
}

TEST_CASE("python subshell content is stripped, launch command retained") {
  model::Session s = session_of({"python", ">>> print(1)", ">>> x = 2", "ls"});
  std::vector<SubshellFragment> fragments;
  const auto out = strip_subshells(s, default_subshell_patterns(), &fragments);
  REQUIRE(out.has_value());
  CHECK(texts_of(*out) == std::vector<std::string>{"python", "ls"});
  REQUIRE(fragments.size() == 1);
  CHECK(fragments[0].pattern_name == "python");
  CHECK(fragments[0].start_index == 1);
  CHECK(fragments[0].commands.size() == 2);
}

TEST_CASE("sessions without subshells pass through unchanged") {
  model::Session s = session_of({"ls", "pwd"});
  std::vector<SubshellFragment> fragments;
  const auto out = strip_subshells(s, default_subshell_patterns(), &fragments);
  REQUIRE(out.has_value());
  CHECK(*out == s);
  CHECK(fragments.empty());
}

TEST_CASE("a session that is entirely one SQL subshell empties") {
  model::Session s = session_of({"SELECT 1;", "SHOW TABLES;"});
  CHECK_FALSE(strip_subshells(s, default_subshell_patterns()).has_value());
}

TEST_CASE("bad subshell patterns fail at load with the rule name") {
  model::Session s = session_of({"ls"});
  try {
    strip_subshells(s, {{"broken", "("}}, nullptr);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("broken") != std::string::npos);
  }
}
