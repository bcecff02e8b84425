#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

#include "shellscope/errors.hpp"
#include "shellscope/pipeline.hpp"
#include "shellscope/tagging.hpp"
#include "shellscope/textutil.hpp"

namespace shellscope::pipeline {

void write_token_stats(const std::vector<TokenStat>& stats, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write token stats: " + path);
  out << "session_id\ttoken_count\ttruncated\tcommand_count\n";
  for (const auto& s : stats) {
    out << s.session_id << '\t' << s.token_count << '\t' << (s.truncated ? 1 : 0) << '\t' << s.command_count
        << '\n';
  }
}

std::vector<TokenStat> read_token_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open token stats: " + path);
  std::vector<TokenStat> stats;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || trim(line).empty()) continue;
    const auto f = split_char(line, '\t');
    if (f.size() != 4) throw DataError("bad token stats row", line_no);
    stats.push_back({f[0], std::stoul(f[1]), f[2] == "1", std::stoul(f[3])});
  }
  return stats;
}

void write_score_histogram(const std::vector<detectors::ScoreRow>& rows, int bins, const std::string& path) {
  if (bins < 1) throw DataError("histogram needs at least one bin");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write histogram: " + path);
  out << "bin_lo\tbin_hi\tcount\n";
  if (rows.empty()) return;

  double lo = rows[0].ensemble, hi = rows[0].ensemble;
  for (const auto& r : rows) {
    lo = std::min(lo, r.ensemble);
    hi = std::max(hi, r.ensemble);
  }
  if (hi <= lo) hi = lo + 1.0;
  const double width = (hi - lo) / bins;
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (const auto& r : rows) {
    auto b = static_cast<std::size_t>((r.ensemble - lo) / width);
    if (b >= counts.size()) b = counts.size() - 1;  // max lands in the last bin
    ++counts[b];
  }
  for (int b = 0; b < bins; ++b) {
    out << format_double(lo + b * width) << '\t' << format_double(lo + (b + 1) * width) << '\t'
        << counts[static_cast<std::size_t>(b)] << '\n';
  }
}

namespace {

std::vector<const detectors::ScoreRow*> by_rank(const std::vector<detectors::ScoreRow>& rows) {
  std::vector<const detectors::ScoreRow*> sorted;
  sorted.reserve(rows.size());
  for (const auto& r : rows) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const detectors::ScoreRow* a, const detectors::ScoreRow* b) { return a->rank < b->rank; });
  return sorted;
}

}  // namespace

void write_top_anomalies(const std::vector<detectors::ScoreRow>& rows, std::size_t k, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write top anomalies: " + path);
  out << "rank\tsession_id\tensemble\tpca_norm\tiforest_norm\tcopod_norm\tautoencoder_norm\n";
  const auto sorted = by_rank(rows);
  const std::size_t n = std::min(k, sorted.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto* r = sorted[i];
    out << r->rank << '\t' << r->session_id << '\t' << format_double(r->ensemble);
    for (const double v : r->normalized) out << '\t' << format_double(v);
    out << '\n';
  }
}

namespace {

void write_scatter(const std::vector<detectors::ScoreRow>& rows, const std::vector<TokenStat>& stats,
                   bool tokens, const std::string& path) {
  std::unordered_map<std::string, const TokenStat*> by_id;
  for (const auto& s : stats) by_id[s.session_id] = &s;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write scatter file: " + path);
  out << "session_id\t" << (tokens ? "token_count" : "command_count") << "\tensemble\n";
  for (const auto& r : rows) {
    const auto it = by_id.find(r.session_id);
    if (it == by_id.end()) continue;
    out << r.session_id << '\t' << (tokens ? it->second->token_count : it->second->command_count) << '\t'
        << format_double(r.ensemble) << '\n';
  }
}

}  // namespace

void write_score_vs_tokens(const std::vector<detectors::ScoreRow>& rows, const std::vector<TokenStat>& stats,
                           const std::string& path) {
  write_scatter(rows, stats, true, path);
}

void write_score_vs_lines(const std::vector<detectors::ScoreRow>& rows, const std::vector<TokenStat>& stats,
                          const std::string& path) {
  write_scatter(rows, stats, false, path);
}

void write_command_scores(const std::vector<detectors::ScoreRow>& rows,
                          const std::vector<model::Session>& sessions, std::size_t k, const std::string& path) {
  std::unordered_map<std::string, double> score_of;
  for (const auto& r : rows) score_of[r.session_id] = r.ensemble;

  struct Entry {
    std::size_t occurrences = 0;
    std::size_t sessions = 0;
    double weighted_sum = 0.0;  // sum over sessions of count * score
  };
  std::map<std::string, Entry> per_command;
  for (const auto& s : sessions) {
    const auto it = score_of.find(s.session_id);
    if (it == score_of.end()) continue;
    std::map<std::string, std::size_t> counts;
    for (const auto& c : s.commands) {
      const std::string name = first_word(c.text);
      if (!name.empty()) ++counts[name];
    }
    for (const auto& [name, count] : counts) {
      auto& e = per_command[name];
      e.occurrences += count;
      e.sessions += 1;
      e.weighted_sum += static_cast<double>(count) * it->second;
    }
  }

  std::vector<std::pair<std::string, Entry>> ranked(per_command.begin(), per_command.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.occurrences != b.second.occurrences) return a.second.occurrences > b.second.occurrences;
    return a.first < b.first;
  });
  if (ranked.size() > k) ranked.resize(k);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write command scores: " + path);
  out << "command\toccurrences\tsessions\tweighted_mean_score\n";
  for (const auto& [name, e] : ranked) {
    out << name << '\t' << e.occurrences << '\t' << e.sessions << '\t'
        << format_double(e.weighted_sum / static_cast<double>(e.occurrences)) << '\n';
  }
}

void write_histogram_file(const std::map<std::string, std::size_t>& hist, const std::string& key_name,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write histogram file: " + path);
  out << key_name << "\tsessions\n";
  for (const auto& [key, count] : hist) out << key << '\t' << count << '\n';
}

void write_annotated_top(const std::vector<detectors::ScoreRow>& rows,
                         const std::vector<model::Session>& sessions, std::size_t k, const std::string& path) {
  std::unordered_map<std::string, const model::Session*> by_id;
  for (const auto& s : sessions) by_id[s.session_id] = &s;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write annotated sessions: " + path);
  const auto sorted = by_rank(rows);
  std::size_t written = 0;
  for (const auto* r : sorted) {
    if (written >= k) break;
    const auto it = by_id.find(r->session_id);
    if (it == by_id.end()) continue;
    out << tagging::render_annotated(*it->second) << '\n';
    ++written;
  }
}

}  // namespace shellscope::pipeline
