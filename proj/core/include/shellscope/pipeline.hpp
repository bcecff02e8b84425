#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "shellscope/detectors.hpp"
#include "shellscope/session.hpp"

namespace shellscope::pipeline {

/// Flat key = value configuration ('#' comments). One file governs every
/// stage; keys are namespaced (parser.*, cleaner.*, tokenizer.*, ...).
class Config {
 public:
  static Config load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Per-stage record of input/param/output hashes; a stage whose hashes all
/// match is a cache hit and is skipped on rerun.
struct ManifestEntry {
  std::string stage;
  std::map<std::string, std::uint64_t> input_hashes;
  std::uint64_t params_hash = 0;
  std::map<std::string, std::uint64_t> output_hashes;
  std::string timestamp;  // informational; excluded from cache decisions
};

struct Manifest {
  std::map<std::string, ManifestEntry> entries;

  static Manifest load(const std::string& path);  // empty when missing
  void save(const std::string& path) const;
};

struct StageOutcome {
  std::string stage;
  bool cached = false;
};

/// Figure-1 style batch pipeline over a working directory. Stage artifacts
/// have fixed names inside the workdir; the manifest makes reruns
/// cache-correct.
class Pipeline {
 public:
  Pipeline(Config config, std::string workdir, std::string data_dir);

  void parse();
  void clean();
  void train_tokenizer();
  void pretrain();
  void embed();
  void score();
  void tag();
  void label();
  void finetune();
  void sweep();
  void report();

  /// parse → clean → train-tokenizer → pretrain → embed → score → tag →
  /// label (→ finetune/sweep when enabled) → report
  void run();

  const std::vector<StageOutcome>& outcomes() const { return outcomes_; }
  std::string artifact(const std::string& name) const;
  const Config& config() const { return cfg_; }

 private:
  bool run_stage(const std::string& stage, const std::vector<std::string>& inputs, const std::string& params,
                 const std::vector<std::string>& outputs, const std::function<void()>& fn);
  std::string data_file(const std::string& key, const std::string& fallback_name) const;

  Config cfg_;
  std::string workdir_;
  std::string data_dir_;
  Manifest manifest_;
  std::vector<StageOutcome> outcomes_;
};

// ---- report artifacts -----------------------------------------------

struct TokenStat {
  std::string session_id;
  std::size_t token_count = 0;
  bool truncated = false;
  std::size_t command_count = 0;
};

void write_token_stats(const std::vector<TokenStat>& stats, const std::string& path);
std::vector<TokenStat> read_token_stats(const std::string& path);

/// Equal-width histogram of ensemble scores; bin counts sum to N.
void write_score_histogram(const std::vector<detectors::ScoreRow>& rows, int bins, const std::string& path);

/// Per-detector normalized scores of the top-K sessions by ensemble score.
void write_top_anomalies(const std::vector<detectors::ScoreRow>& rows, std::size_t k, const std::string& path);

void write_score_vs_tokens(const std::vector<detectors::ScoreRow>& rows, const std::vector<TokenStat>& stats,
                           const std::string& path);
void write_score_vs_lines(const std::vector<detectors::ScoreRow>& rows, const std::vector<TokenStat>& stats,
                          const std::string& path);

/// Weighted average of session ensemble scores per command name (weights =
/// occurrences of the command in the session), top-K names by occurrence.
void write_command_scores(const std::vector<detectors::ScoreRow>& rows,
                          const std::vector<model::Session>& sessions, std::size_t k, const std::string& path);

void write_histogram_file(const std::map<std::string, std::size_t>& hist, const std::string& key_name,
                          const std::string& path);

/// Top-K sessions rendered with their annotations, separated by blank lines.
void write_annotated_top(const std::vector<detectors::ScoreRow>& rows,
                         const std::vector<model::Session>& sessions, std::size_t k, const std::string& path);

}  // namespace shellscope::pipeline
