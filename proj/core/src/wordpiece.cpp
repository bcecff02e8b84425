#include "shellscope/wordpiece.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <tuple>

#include "shellscope/errors.hpp"
#include "shellscope/textutil.hpp"

namespace shellscope::wordpiece {

const std::array<const char*, kNumSpecials> kSpecialTokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

void Vocabulary::rebuild_index() {
  token_to_id.clear();
  token_to_id.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!token_to_id.emplace(tokens[i], static_cast<int>(i)).second) {
      throw DataError("duplicate token in vocabulary: " + tokens[i]);
    }
  }
}

namespace {

// split into UTF-8 code points (input is sanitized upstream, so sequences
// are well formed)
std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0) {
      len = 2;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
    }
    len = std::min(len, s.size() - i);
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

// words are split on spaces/tabs only; '\n' stays inside words so the line
// delimiter is part of the alphabet
std::vector<std::string> pre_split(const std::string& text) { return split_words(text); }

std::string strip_continuation(const std::string& token) {
  return token.rfind("##", 0) == 0 ? token.substr(2) : token;
}

struct TrainWord {
  std::vector<int> symbols;  // indices into the symbol table
  std::size_t count = 0;
};

}  // namespace

Vocabulary train_vocabulary(const std::vector<std::string>& texts, std::size_t target_size,
                            std::size_t min_frequency) {
  if (texts.empty()) throw DataError("tokenizer training corpus is empty");
  if (min_frequency < 1) min_frequency = 1;

  std::map<std::string, std::size_t> word_counts;
  for (const auto& t : texts) {
    for (auto& w : pre_split(t)) ++word_counts[w];
  }
  if (word_counts.empty()) throw DataError("tokenizer training corpus has no words");

  // symbol table: string <-> dense id, shared across words
  std::vector<std::string> symbols;
  std::unordered_map<std::string, int> symbol_ids;
  auto intern = [&](const std::string& s) {
    const auto it = symbol_ids.find(s);
    if (it != symbol_ids.end()) return it->second;
    const int id = static_cast<int>(symbols.size());
    symbols.push_back(s);
    symbol_ids.emplace(s, id);
    return id;
  };

  std::vector<TrainWord> words;
  words.reserve(word_counts.size());
  std::map<std::string, std::size_t> alphabet_counts;  // ordered: vocab layout is sorted
  for (const auto& [word, count] : word_counts) {
    TrainWord tw;
    tw.count = count;
    const auto chars = utf8_chars(word);
    if (chars.size() > kMaxWordChars) continue;  // would tokenize to UNK anyway
    for (std::size_t i = 0; i < chars.size(); ++i) {
      const std::string piece = i == 0 ? chars[i] : "##" + chars[i];
      tw.symbols.push_back(intern(piece));
      alphabet_counts[piece] += count;
    }
    words.push_back(std::move(tw));
  }

  Vocabulary vocab;
  std::vector<std::size_t> train_freq;
  for (const auto* s : kSpecialTokens) {
    vocab.tokens.emplace_back(s);
    train_freq.push_back(0);
  }
  for (const auto& [piece, count] : alphabet_counts) {
    vocab.tokens.push_back(piece);
    train_freq.push_back(count);
  }

  const std::size_t needed_floor = kNumSpecials + alphabet_counts.size();
  if (target_size <= needed_floor) {
    vocab.reached_target = vocab.tokens.size() >= target_size;
    vocab.train_frequency = std::move(train_freq);
    vocab.rebuild_index();
    return vocab;
  }

  while (vocab.tokens.size() < target_size) {
    // count singles and adjacent pairs, weighted by word frequency
    std::unordered_map<int, std::size_t> single;
    std::map<std::pair<int, int>, std::size_t> pairs;
    for (const auto& w : words) {
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        single[w.symbols[i]] += w.count;
        if (i + 1 < w.symbols.size()) pairs[{w.symbols[i], w.symbols[i + 1]}] += w.count;
      }
    }

    // best score = count(pair) / (count(left) * count(right)); compared via
    // cross products to keep ties exact, broken by smallest (left, right)
    bool found = false;
    std::pair<int, int> best{};
    std::size_t best_count = 0;
    unsigned __int128 best_num = 0, best_den = 1;
    for (const auto& [pr, c] : pairs) {
      if (c < min_frequency) continue;
      const unsigned __int128 num = c;
      const unsigned __int128 den =
          static_cast<unsigned __int128>(single[pr.first]) * static_cast<unsigned __int128>(single[pr.second]);
      bool better = false;
      if (!found) {
        better = true;
      } else {
        const unsigned __int128 lhs = num * best_den;
        const unsigned __int128 rhs = best_num * den;
        if (lhs != rhs) {
          better = lhs > rhs;
        } else {
          const auto& l = symbols[pr.first];
          const auto& r = symbols[pr.second];
          const auto& bl = symbols[best.first];
          const auto& br = symbols[best.second];
          better = std::tie(l, r) < std::tie(bl, br);
        }
      }
      if (better) {
        found = true;
        best = pr;
        best_count = c;
        best_num = num;
        best_den = den;
      }
    }
    if (!found) break;

    const std::string merged = symbols[best.first] + strip_continuation(symbols[best.second]);
    const int merged_id = intern(merged);
    vocab.tokens.push_back(merged);
    train_freq.push_back(best_count);

    for (auto& w : words) {
      if (w.symbols.size() < 2) continue;
      std::vector<int> next;
      next.reserve(w.symbols.size());
      std::size_t i = 0;
      while (i < w.symbols.size()) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == best.first && w.symbols[i + 1] == best.second) {
          next.push_back(merged_id);
          i += 2;
        } else {
          next.push_back(w.symbols[i]);
          ++i;
        }
      }
      w.symbols = std::move(next);
    }
  }

  vocab.reached_target = vocab.tokens.size() >= target_size;
  vocab.train_frequency = std::move(train_freq);
  vocab.rebuild_index();
  return vocab;
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_seq_len,
                       std::string session_id) {
  if (vocab.tokens.size() < kNumSpecials) throw DataError("vocabulary missing special tokens");
  if (max_seq_len < 2) throw DataError("max_seq_len must be at least 2");

  TokenSequence seq;
  seq.session_id = std::move(session_id);
  seq.ids.push_back(kClsId);

  std::vector<int> body;
  for (const auto& word : pre_split(text)) {
    const auto chars = utf8_chars(word);
    if (chars.size() > kMaxWordChars) {
      body.push_back(kUnkId);
      continue;
    }
    std::vector<int> pieces;
    std::size_t pos = 0;
    bool ok = true;
    while (pos < chars.size()) {
      int match = -1;
      std::size_t match_end = pos;
      std::string candidate = pos > 0 ? "##" : "";
      // longest match first: extend and remember the last hit
      std::string grow = candidate;
      for (std::size_t end = pos; end < chars.size(); ++end) {
        grow += chars[end];
        const int id = vocab.id(grow);
        if (id >= 0) {
          match = id;
          match_end = end + 1;
        }
      }
      if (match < 0) {
        ok = false;
        break;
      }
      pieces.push_back(match);
      pos = match_end;
    }
    if (ok && !pieces.empty()) {
      body.insert(body.end(), pieces.begin(), pieces.end());
    } else {
      body.push_back(kUnkId);
    }
  }

  const std::size_t budget = max_seq_len - 2;
  if (body.size() > budget) {
    body.resize(budget);
    seq.truncated = true;
  }
  seq.ids.insert(seq.ids.end(), body.begin(), body.end());
  seq.ids.push_back(kSepId);
  return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (const int id : seq.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.tokens.size()) {
      throw DataError("token id out of range: " + std::to_string(id));
    }
    if (id == kClsId || id == kSepId || id == kPadId) continue;
    const std::string& tok = vocab.tokens[static_cast<std::size_t>(id)];
    if (tok.rfind("##", 0) == 0 && !words.empty()) {
      words.back() += tok.substr(2);
    } else {
      words.push_back(tok);
    }
  }
  return join(words, " ");
}

bool contains_unk(const TokenSequence& seq) {
  return std::find(seq.ids.begin(), seq.ids.end(), kUnkId) != seq.ids.end();
}

std::string normalize_text(const std::string& text) { return join(pre_split(text), " "); }

namespace {

std::string escape_token(const std::string& t) {
  std::string out;
  out.reserve(t.size());
  for (char c : t) {
    if (c == '\\') {
      out += "\\\\";
    } else if (c == '\n') {
      out += "\\n";
    } else {
      out += c;
    }
  }
  return out;
}

std::string unescape_token(const std::string& t, std::size_t line_no) {
  std::string out;
  out.reserve(t.size());
  std::size_t i = 0;
  while (i < t.size()) {
    if (t[i] == '\\') {
      if (i + 1 >= t.size()) throw DataError("dangling escape in vocabulary", line_no);
      out += t[i + 1] == 'n' ? '\n' : t[i + 1];
      i += 2;
    } else {
      out += t[i++];
    }
  }
  return out;
}

}  // namespace

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open vocabulary file for writing: " + path);
  for (const auto& t : vocab.tokens) out << escape_token(t) << '\n';
  if (!out) throw DataError("write failed: " + path);
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary file: " + path);
  Vocabulary vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    vocab.tokens.push_back(unescape_token(line, line_no));
  }
  if (vocab.tokens.size() < kNumSpecials) throw DataError("vocabulary too small to contain special tokens");
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    if (vocab.tokens[i] != kSpecialTokens[i]) {
      throw DataError(std::string("special token mismatch at id ") + std::to_string(i));
    }
  }
  vocab.rebuild_index();
  return vocab;
}

}  // namespace shellscope::wordpiece
