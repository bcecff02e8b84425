#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "shellscope/errors.hpp"
#include "shellscope/rng.hpp"
#include "shellscope/wordpiece.hpp"

using namespace shellscope;
using namespace shellscope::wordpiece;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "shellscope_tok_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

Vocabulary vocab_of(std::vector<std::string> extra) {
  Vocabulary v;
  for (const auto* s : kSpecialTokens) v.tokens.emplace_back(s);
  for (auto& t : extra) v.tokens.push_back(std::move(t));
  v.rebuild_index();
  return v;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

// Hand-run of the merge rule on the three-line corpus [ls, ls, ls -la]:
// splits are (l ##s) x3 and (- ##l ##a). Pair scores: (l,##s) = 3/(3*3),
// (-,##l) = 1, (##l,##a) = 1; the tie breaks to the lexicographically
// smaller pair (##l,##a) -> ##la, then (-,##la) -> -la, then (l,##s) -> ls,
// after which no pairs remain.
TEST_CASE("greedy merge training follows the scored-merge rule") {
  const auto vocab = train_vocabulary({"ls", "ls", "ls -la"}, 20, 1);
  const std::vector<std::string> expected = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
                                             "##a",   "##l",   "##s",   "-",     "l",
                                             "##la",  "-la",   "ls"};
  CHECK(vocab.tokens == expected);
  CHECK_FALSE(vocab.reached_target);  // corpus exhausted before 20 tokens
}

TEST_CASE("empty corpus is an error") {
  CHECK_THROWS_AS(train_vocabulary({}, 100, 1), DataError);
  CHECK_THROWS_AS(train_vocabulary({"   "}, 100, 1), DataError);
}

TEST_CASE("a corpus too small for the target yields a warning flag, not an error") {
  const auto vocab = train_vocabulary({"ls"}, 30000, 1);
  CHECK(vocab.tokens.size() < 30000);
  CHECK_FALSE(vocab.reached_target);
}

TEST_CASE("min_frequency stops merging of rare pairs") {
  // every word appears once, so no pair reaches frequency 2
  const auto vocab = train_vocabulary({"ab cd ef"}, 100, 2);
  for (std::size_t i = kNumSpecials; i < vocab.tokens.size(); ++i) {
    CHECK(vocab.tokens[i].size() <= 3);  // alphabet only ("##x" pieces)
  }
}

TEST_CASE("every non-special token had corpus support when added") {
  const auto vocab = train_vocabulary({"ls -la", "ls -la", "cat file", "cat log"}, 64, 1);
  REQUIRE(vocab.train_frequency.size() == vocab.tokens.size());
  for (std::size_t i = kNumSpecials; i < vocab.tokens.size(); ++i) {
    CHECK(vocab.train_frequency[i] > 0);
  }
}

TEST_CASE("exact-vocabulary word tokenizes to itself") {
  const auto vocab = vocab_of({"ls"});
  const auto seq = tokenize("ls", vocab, 512);
  CHECK(seq.ids == std::vector<int>{kClsId, 5, kSepId});
  CHECK_FALSE(seq.truncated);
}

TEST_CASE("unsegmentable words become UNK") {
  const auto vocab = vocab_of({"ls"});
  const auto seq = tokenize("zzz", vocab, 512);
  CHECK(seq.ids == std::vector<int>{kClsId, kUnkId, kSepId});
  CHECK(contains_unk(seq));
}

TEST_CASE("greedy longest-match-first segmentation uses continuations") {
  const auto vocab = vocab_of({"ls", "##of", "l", "##s", "##o", "##f"});
  const auto seq = tokenize("lsof", vocab, 512);
  REQUIRE(seq.ids.size() == 4);
  CHECK(seq.ids[1] == vocab.id("ls"));
  CHECK(seq.ids[2] == vocab.id("##of"));
}

TEST_CASE("sequences are truncated at max_seq_len with the flag set") {
  const auto vocab = vocab_of({"a"});
  const auto seq = tokenize("a a a a a a a a", vocab, 6);
  CHECK(seq.ids.size() == 6);
  CHECK(seq.truncated);
  CHECK(seq.ids.front() == kClsId);
  CHECK(seq.ids.back() == kSepId);
}

TEST_CASE("detokenize inverts tokenize and surfaces UNK markers") {
  const auto vocab = vocab_of({"ls", "##of"});
  TokenSequence seq;
  seq.ids = {kClsId, vocab.id("ls"), vocab.id("##of"), kSepId};
  CHECK(detokenize(seq, vocab) == "lsof");

  TokenSequence with_unk;
  with_unk.ids = {kClsId, kUnkId, kSepId};
  CHECK(detokenize(with_unk, vocab) == "[UNK]");

  TokenSequence bad;
  bad.ids = {kClsId, 9999, kSepId};
  CHECK_THROWS_AS(detokenize(bad, vocab), DataError);
}

TEST_CASE("round-trip identity holds for UNK-free untruncated corpora") {
  Rng rng(31337);
  const std::vector<std::string> heads = {"ls", "cat", "grep", "tar", "du", "find", "echo", "make"};
  const std::vector<std::string> args = {"-la", "file.txt", "/var/log", "pattern", "x=1", "a|b", "./run"};
  std::vector<std::string> corpus;
  for (int i = 0; i < 1000; ++i) {
    std::string cmd = heads[rng.uniform_below(heads.size())];
    const int n = 1 + static_cast<int>(rng.uniform_below(3));
    for (int k = 0; k < n; ++k) cmd += " " + args[rng.uniform_below(args.size())];
    corpus.push_back(cmd);
  }
  const auto vocab = train_vocabulary(corpus, 400, 1);
  for (const auto& cmd : corpus) {
    const auto seq = tokenize(cmd, vocab, 512);
    REQUIRE_FALSE(contains_unk(seq));
    REQUIRE_FALSE(seq.truncated);
    CHECK(detokenize(seq, vocab) == normalize_text(cmd));
    CHECK(normalize_text(cmd) == cmd);  // already single-spaced
  }
}

TEST_CASE("newlines live inside words and survive the vocabulary file") {
  // session text is '\n'-joined command lines, so tokens can carry newlines
  const std::vector<std::string> corpus = {"ls\npwd", "ls\npwd", "ls\npwd", "cat x\npwd"};
  const auto vocab = train_vocabulary(corpus, 64, 1);
  bool has_newline_token = false;
  for (const auto& t : vocab.tokens) {
    if (t.find('\n') != std::string::npos) has_newline_token = true;
  }
  CHECK(has_newline_token);

  const auto path = temp_path("vocab_nl.txt");
  save_vocabulary(vocab, path);
  const auto back = load_vocabulary(path);
  CHECK(back.tokens == vocab.tokens);

  const auto seq = tokenize("ls\npwd", vocab, 64);
  CHECK_FALSE(contains_unk(seq));
  CHECK(detokenize(seq, vocab) == "ls\npwd");
}

TEST_CASE("training is deterministic and the file is byte-exact") {
  const std::vector<std::string> corpus = {"ls -la", "cat file", "grep x file", "ls -la"};
  const auto v1 = train_vocabulary(corpus, 64, 1);
  const auto v2 = train_vocabulary(corpus, 64, 1);
  CHECK(v1.tokens == v2.tokens);

  const auto p1 = temp_path("v1.txt");
  const auto p2 = temp_path("v2.txt");
  save_vocabulary(v1, p1);
  save_vocabulary(v2, p2);
  CHECK(file_bytes(p1) == file_bytes(p2));

  const auto loaded = load_vocabulary(p1);
  CHECK(loaded.tokens == v1.tokens);
}

TEST_CASE("case matters: LS and ls are distinct") {
  const auto vocab = train_vocabulary({"ls LS ls LS"}, 64, 1);
  const auto lower = tokenize("ls", vocab, 16);
  const auto upper = tokenize("LS", vocab, 16);
  CHECK(lower.ids != upper.ids);
}
