#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

namespace shellscope::wordpiece {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kMaskId = 4;
inline constexpr std::size_t kNumSpecials = 5;
inline constexpr std::size_t kMaxWordChars = 100;  // longer words map to UNK

extern const std::array<const char*, kNumSpecials> kSpecialTokens;  // [PAD] [UNK] [CLS] [SEP] [MASK]

/// Case-sensitive subword dictionary. Ids are dense: specials at 0..4,
/// alphabet characters next (sorted), then merges in training order.
/// Continuation pieces carry the "##" prefix.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> token_to_id;
  bool reached_target = true;  // false when the corpus was too small
  // corpus frequency of each token when it entered the vocabulary (training
  // only; zero for specials, empty for loaded vocabularies)
  std::vector<std::size_t> train_frequency;

  int id(const std::string& token) const {
    const auto it = token_to_id.find(token);
    return it == token_to_id.end() ? -1 : it->second;
  }
  std::size_t size() const { return tokens.size(); }

  void rebuild_index();
};

struct TokenSequence {
  std::string session_id;
  std::vector<int> ids;  // starts with CLS, ends with SEP
  bool truncated = false;

  std::size_t length() const { return ids.size(); }
};

/// Greedy WordPiece training: start from the corpus character alphabet plus
/// specials, then repeatedly merge the pair maximizing
/// count(pair) / (count(left) * count(right)), lexicographically smallest
/// pair on ties, until `target_size` tokens exist or no pair reaches
/// `min_frequency`. Deterministic. An empty corpus is an error; a corpus too
/// small for the target yields a smaller vocabulary with reached_target
/// cleared.
Vocabulary train_vocabulary(const std::vector<std::string>& texts, std::size_t target_size,
                            std::size_t min_frequency);

/// Words are runs split on spaces/tabs; newlines are ordinary characters so
/// the session line delimiter stays visible to the model. Each word is
/// segmented longest-match-first; unsegmentable words become UNK.
TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_seq_len,
                       std::string session_id = "");

/// Inverse of tokenize for in-vocabulary text: words re-joined with single
/// spaces (the normalized form). Unknown ids raise; UNK tokens surface as
/// their marker string.
std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab);

bool contains_unk(const TokenSequence& seq);

/// tokenize-then-detokenize fixpoint of `text`
std::string normalize_text(const std::string& text);

/// One token per line, line number = id. '\n' and '\\' inside tokens are
/// escaped so the file stays line-oriented; byte-exact across runs.
void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

}  // namespace shellscope::wordpiece
