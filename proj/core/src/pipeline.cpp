#include "shellscope/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "shellscope/binio.hpp"
#include "shellscope/cleaner.hpp"
#include "shellscope/corpus_io.hpp"
#include "shellscope/embedding.hpp"
#include "shellscope/encoder.hpp"
#include "shellscope/errors.hpp"
#include "shellscope/parser.hpp"
#include "shellscope/supervised.hpp"
#include "shellscope/tagging.hpp"
#include "shellscope/textutil.hpp"
#include "shellscope/wordpiece.hpp"

namespace shellscope::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------- Config ----

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  Config cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw DataError("config line is not key = value", line_no);
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw DataError("config line with empty key", line_no);
    cfg.values_[key] = trim(t.substr(eq + 1));
  }
  return cfg;
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int Config::get_int(const std::string& key, int fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : std::stoi(it->second);
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : std::stod(it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw DataError("bad boolean config value for " + key + ": " + v);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : std::stoull(it->second);
}

// ----------------------------------------------------------- Manifest ----

Manifest Manifest::load(const std::string& path) {
  Manifest m;
  std::ifstream in(path);
  if (!in) return m;
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  for (const auto& [stage, entry] : doc.at("stages").items()) {
    ManifestEntry me;
    me.stage = stage;
    me.params_hash = entry.value("params_hash", 0ull);
    me.timestamp = entry.value("timestamp", "");
    if (entry.contains("inputs")) {
      for (const auto& [k, v] : entry["inputs"].items()) me.input_hashes[k] = v.get<std::uint64_t>();
    }
    if (entry.contains("outputs")) {
      for (const auto& [k, v] : entry["outputs"].items()) me.output_hashes[k] = v.get<std::uint64_t>();
    }
    m.entries[stage] = std::move(me);
  }
  return m;
}

void Manifest::save(const std::string& path) const {
  json stages = json::object();
  for (const auto& [stage, e] : entries) {
    json entry;
    entry["params_hash"] = e.params_hash;
    entry["timestamp"] = e.timestamp;
    entry["inputs"] = e.input_hashes;
    entry["outputs"] = e.output_hashes;
    stages[stage] = std::move(entry);
  }
  json doc;
  doc["stages"] = std::move(stages);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << doc.dump(2) << '\n';
}

// ----------------------------------------------------------- Pipeline ----

Pipeline::Pipeline(Config config, std::string workdir, std::string data_dir)
    : cfg_(std::move(config)), workdir_(std::move(workdir)), data_dir_(std::move(data_dir)) {
  fs::create_directories(workdir_);
  manifest_ = Manifest::load(artifact("manifest.json"));
}

std::string Pipeline::artifact(const std::string& name) const { return (fs::path(workdir_) / name).string(); }

std::string Pipeline::data_file(const std::string& key, const std::string& fallback_name) const {
  const std::string configured = cfg_.get(key, "");
  if (!configured.empty()) return configured;
  return (fs::path(data_dir_) / fallback_name).string();
}

namespace {

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

}  // namespace

bool Pipeline::run_stage(const std::string& stage, const std::vector<std::string>& inputs,
                         const std::string& params, const std::vector<std::string>& outputs,
                         const std::function<void()>& fn) {
  ManifestEntry entry;
  entry.stage = stage;
  for (const auto& path : inputs) {
    if (!fs::exists(path)) {
      throw DataError("stage '" + stage + "' is missing input " + path +
                      " (run the preceding stages first)");
    }
    entry.input_hashes[path] = hash_file(path);
  }
  entry.params_hash = fnv1a(params);

  const auto it = manifest_.entries.find(stage);
  if (it != manifest_.entries.end()) {
    const auto& prev = it->second;
    bool hit = prev.input_hashes == entry.input_hashes && prev.params_hash == entry.params_hash;
    if (hit) {
      for (const auto& [path, hash] : prev.output_hashes) {
        if (!fs::exists(path) || hash_file(path) != hash) {
          hit = false;  // stale or deleted output
          break;
        }
      }
    }
    if (hit) {
      outcomes_.push_back({stage, true});
      return false;
    }
  }

  try {
    fn();
  } catch (const std::exception& e) {
    throw NumericError("stage '" + stage + "' failed: " + e.what());
  }

  for (const auto& path : outputs) entry.output_hashes[path] = hash_file(path);
  entry.timestamp = now_iso8601();
  manifest_.entries[stage] = std::move(entry);
  manifest_.save(artifact("manifest.json"));
  outcomes_.push_back({stage, false});
  return true;
}

namespace {

void write_kv_stats(const std::string& path, const std::vector<std::pair<std::string, std::size_t>>& stats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write stats file: " + path);
  for (const auto& [k, v] : stats) out << k << " = " << v << '\n';
}

}  // namespace

void Pipeline::parse() {
  const std::string corpus = cfg_.get("corpus", artifact("corpus.jsonl"));
  const std::string command_list = data_file("parser.command_list", "common_commands.txt");
  const std::string out_sessions = artifact("sessions_raw.jsonl");
  const std::string out_stats = artifact("parse_stats.txt");

  parser::PromptRule rule = parser::load_prompt_rule(command_list);
  rule.terminal_symbols = cfg_.get("parser.terminal_symbols", rule.terminal_symbols);
  if (cfg_.has("parser.editors")) rule.editor_commands = split_char(cfg_.get("parser.editors", ""), ',');
  if (cfg_.has("parser.error_patterns")) {
    rule.error_patterns = split_char(cfg_.get("parser.error_patterns", ""), '|');
  }
  rule.max_prompt_length = static_cast<std::size_t>(cfg_.get_int("parser.max_prompt_length", 64));
  rule.finalize();

  const std::string params = "symbols=" + rule.terminal_symbols +
                             ";maxlen=" + std::to_string(rule.max_prompt_length) +
                             ";editors=" + join(rule.editor_commands, ",") +
                             ";errors=" + join(rule.error_patterns, "|");

  run_stage("parse", {corpus, command_list}, params, {out_sessions, out_stats}, [&] {
    model::ReadStats read_stats;
    const auto activities = model::read_activities(corpus, &read_stats);
    auto [sessions, stats] = parser::parse_corpus(activities, rule);
    stats.utf8_replacements = read_stats.utf8_replacements;
    model::write_sessions(sessions, out_sessions);
    write_kv_stats(out_stats, {{"activities_in", stats.activities_in},
                               {"sessions_out", stats.sessions_out},
                               {"activities_without_prompt", stats.activities_without_prompt},
                               {"empty_sessions_dropped", stats.empty_sessions_dropped},
                               {"duplicates_removed", stats.duplicates_removed},
                               {"prompts_found", stats.prompts_found},
                               {"lines_total", stats.lines_total},
                               {"command_lines", stats.command_lines},
                               {"output_lines", stats.output_lines},
                               {"buffer_lines_excised", stats.buffer_lines_excised},
                               {"lines_dropped", stats.lines_dropped},
                               {"utf8_replacements", stats.utf8_replacements}});
  });
}

void Pipeline::clean() {
  const std::string in_sessions = artifact("sessions_raw.jsonl");
  const std::string out_sessions = artifact("sessions_clean.jsonl");
  const std::string out_fragments = artifact("subshell_fragments.jsonl");
  const std::string out_stats = artifact("clean_stats.txt");

  cleaner::CleaningConfig cc = cleaner::CleaningConfig::defaults();
  cc.drop_error_lines = cfg_.get_bool("cleaner.drop_error_lines", cc.drop_error_lines);
  cc.max_consecutive_spaces = static_cast<std::uint32_t>(cfg_.get_int("cleaner.max_consecutive_spaces", 1));
  cc.max_char_repeat = static_cast<std::uint32_t>(cfg_.get_int("cleaner.max_char_repeat", 3));
  cc.command_name_pattern = cfg_.get("cleaner.command_name_pattern", cc.command_name_pattern);
  cc.number_mask_token = cfg_.get("cleaner.number_mask_token", cc.number_mask_token);
  cc.cycle_min_repeats = static_cast<std::uint32_t>(cfg_.get_int("cleaner.cycle_min_repeats", 3));
  const bool strip = cfg_.get_bool("cleaner.strip_subshells", true);

  const std::string params = std::string("drop_err=") + (cc.drop_error_lines ? "1" : "0") +
                             ";spaces=" + std::to_string(cc.max_consecutive_spaces) +
                             ";repeat=" + std::to_string(cc.max_char_repeat) + ";name=" + cc.command_name_pattern +
                             ";num=" + cc.number_mask_token + ";cycle=" + std::to_string(cc.cycle_min_repeats) +
                             ";strip=" + (strip ? "1" : "0");

  run_stage("clean", {in_sessions}, params, {out_sessions, out_fragments, out_stats}, [&] {
    auto sessions = model::read_sessions(in_sessions);
    const auto patterns = cleaner::default_subshell_patterns();
    std::vector<model::Session> cleaned;
    cleaner::CleanStats stats;
    std::size_t subshell_sessions_dropped = 0;
    std::ofstream frag_out(out_fragments, std::ios::binary);
    if (!frag_out) throw DataError("cannot write " + out_fragments);

    for (auto& session : sessions) {
      const std::string id = session.session_id;
      std::optional<model::Session> cur = std::move(session);
      if (strip) {
        std::vector<cleaner::SubshellFragment> fragments;
        cur = cleaner::strip_subshells(std::move(*cur), patterns, &fragments);
        for (const auto& f : fragments) {
          json rec;
          rec["session_id"] = id;
          rec["pattern"] = f.pattern_name;
          rec["start_index"] = f.start_index;
          json cmds = json::array();
          for (const auto& c : f.commands) cmds.push_back(c.text);
          rec["commands"] = std::move(cmds);
          frag_out << rec.dump() << '\n';
        }
        if (!cur) {
          ++subshell_sessions_dropped;
          continue;
        }
      }
      cur = cleaner::clean_session(std::move(*cur), cc, &stats);
      if (cur) cleaned.push_back(std::move(*cur));
    }

    model::write_sessions(cleaned, out_sessions);
    write_kv_stats(out_stats, {{"sessions_in", sessions.size()},
                               {"sessions_out", cleaned.size()},
                               {"lines_dropped_error", stats.lines_dropped_error},
                               {"lines_dropped_artifact", stats.lines_dropped_artifact},
                               {"lines_dropped_name_filter", stats.lines_dropped_name_filter},
                               {"sessions_emptied", stats.sessions_emptied},
                               {"sessions_all_subshell", subshell_sessions_dropped},
                               {"cycles_collapsed", stats.cycles_collapsed}});
  });
}

void Pipeline::train_tokenizer() {
  const std::string in_sessions = artifact("sessions_clean.jsonl");
  const std::string out_vocab = artifact("vocab.txt");
  const int vocab_size = cfg_.get_int("tokenizer.vocab_size", 4000);
  const int min_freq = cfg_.get_int("tokenizer.min_frequency", 2);

  const std::string params = "size=" + std::to_string(vocab_size) + ";minfreq=" + std::to_string(min_freq);
  run_stage("train-tokenizer", {in_sessions}, params, {out_vocab}, [&] {
    const auto sessions = model::read_sessions(in_sessions);
    std::vector<std::string> texts;
    texts.reserve(sessions.size());
    for (const auto& s : sessions) texts.push_back(s.joined_command_text());
    const auto vocab = wordpiece::train_vocabulary(texts, static_cast<std::size_t>(vocab_size),
                                                   static_cast<std::size_t>(min_freq));
    wordpiece::save_vocabulary(vocab, out_vocab);
  });
}

namespace {

encoder::EncoderConfig encoder_config_from(const Config& cfg, int vocab_size) {
  encoder::EncoderConfig ec;
  ec.vocab_size = vocab_size;
  ec.hidden_dim = cfg.get_int("encoder.hidden_dim", 128);
  ec.num_layers = cfg.get_int("encoder.num_layers", 4);
  ec.num_heads = cfg.get_int("encoder.num_heads", 4);
  ec.ffn_dim = cfg.get_int("encoder.ffn_dim", 512);
  ec.max_seq_len = cfg.get_int("encoder.max_seq_len", 512);
  ec.dropout_rate = cfg.get_double("encoder.dropout_rate", 0.1);
  ec.mask_prob = cfg.get_double("encoder.mask_prob", 0.15);
  ec.seed = cfg.get_u64("seed", 42);
  return ec;
}

std::vector<wordpiece::TokenSequence> tokenize_sessions(const std::vector<model::Session>& sessions,
                                                        const wordpiece::Vocabulary& vocab, int max_seq_len) {
  std::vector<wordpiece::TokenSequence> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) {
    out.push_back(wordpiece::tokenize(s.joined_command_text(), vocab, static_cast<std::size_t>(max_seq_len),
                                      s.session_id));
  }
  return out;
}

}  // namespace

void Pipeline::pretrain() {
  const std::string in_sessions = artifact("sessions_clean.jsonl");
  const std::string in_vocab = artifact("vocab.txt");
  const std::string out_ckpt = artifact("encoder.ckpt");
  const std::string out_log = artifact("mlm_log.tsv");

  const int steps = cfg_.get_int("pretrain.steps", 300);
  const int batch_size = cfg_.get_int("pretrain.batch_size", 16);
  const double lr = cfg_.get_double("pretrain.learning_rate", 1e-4);

  const std::string params = "steps=" + std::to_string(steps) + ";bs=" + std::to_string(batch_size) +
                             ";lr=" + format_double(lr) + ";d=" + std::to_string(cfg_.get_int("encoder.hidden_dim", 128)) +
                             ";L=" + std::to_string(cfg_.get_int("encoder.num_layers", 4)) +
                             ";H=" + std::to_string(cfg_.get_int("encoder.num_heads", 4)) +
                             ";ffn=" + std::to_string(cfg_.get_int("encoder.ffn_dim", 512)) +
                             ";T=" + std::to_string(cfg_.get_int("encoder.max_seq_len", 512)) +
                             ";drop=" + format_double(cfg_.get_double("encoder.dropout_rate", 0.1)) +
                             ";mask=" + format_double(cfg_.get_double("encoder.mask_prob", 0.15)) +
                             ";seed=" + std::to_string(cfg_.get_u64("seed", 42));

  run_stage("pretrain", {in_sessions, in_vocab}, params, {out_ckpt, out_log}, [&] {
    const auto sessions = model::read_sessions(in_sessions);
    const auto vocab = wordpiece::load_vocabulary(in_vocab);
    encoder::EncoderConfig ec = encoder_config_from(cfg_, static_cast<int>(vocab.size()));
    const auto corpus = tokenize_sessions(sessions, vocab, ec.max_seq_len);

    encoder::Encoder<float> enc(ec);
    enc.init_weights();
    encoder::MlmTrainConfig tc;
    tc.steps = steps;
    tc.batch_size = batch_size;
    tc.learning_rate = lr;
    tc.seed = ec.seed;
    const auto log = encoder::train_mlm(enc, corpus, tc);

    encoder::save_checkpoint(enc, out_ckpt);
    std::ofstream lout(out_log, std::ios::binary);
    lout << "step\tloss\taccuracy\n";
    for (std::size_t i = 0; i < log.loss.size(); ++i) {
      lout << (i + 1) << '\t' << format_double(log.loss[i]) << '\t' << format_double(log.accuracy[i]) << '\n';
    }
  });
}

void Pipeline::embed() {
  const std::string in_sessions = artifact("sessions_clean.jsonl");
  const std::string in_vocab = artifact("vocab.txt");
  const std::string in_ckpt = artifact("encoder.ckpt");
  const std::string out_emb = artifact("embeddings.bin");
  const std::string out_stats = artifact("token_stats.tsv");
  const std::string pooling_s = cfg_.get("embed.pooling", "mean");

  run_stage("embed", {in_sessions, in_vocab, in_ckpt}, "pooling=" + pooling_s, {out_emb, out_stats}, [&] {
    const auto sessions = model::read_sessions(in_sessions);
    const auto vocab = wordpiece::load_vocabulary(in_vocab);
    const auto enc = encoder::load_checkpoint(in_ckpt);
    const auto pooling = encoder::pooling_from_string(pooling_s);
    const auto corpus = tokenize_sessions(sessions, vocab, enc.config().max_seq_len);

    detectors::EmbeddingMatrix m;
    m.pooling = pooling;
    m.values.resize(static_cast<Eigen::Index>(corpus.size()), enc.config().hidden_dim);
    std::vector<TokenStat> stats;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto row = encoder::embed_session(enc, corpus[i], pooling);
      m.values.row(static_cast<Eigen::Index>(i)) = row.cast<double>();
      m.session_ids.push_back(corpus[i].session_id);
      stats.push_back({corpus[i].session_id, corpus[i].ids.size(), corpus[i].truncated,
                       sessions[i].commands.size()});
    }
    detectors::save_embeddings(m, out_emb);
    write_token_stats(stats, out_stats);
  });
}

void Pipeline::score() {
  const std::string in_emb = artifact("embeddings.bin");
  const std::string in_sessions = artifact("sessions_clean.jsonl");
  const std::string out_scores = artifact("scores.tsv");
  const std::string out_sessions = artifact("sessions_scored.jsonl");

  detectors::EnsembleConfig dc;
  dc.pca_variance_fraction = cfg_.get_double("detectors.pca_variance_fraction", 0.9);
  dc.iforest_trees = cfg_.get_int("detectors.iforest_trees", 100);
  dc.iforest_subsample = cfg_.get_int("detectors.iforest_subsample", 256);
  dc.ae_epochs = cfg_.get_int("detectors.ae_epochs", 100);
  dc.ae_batch_size = cfg_.get_int("detectors.ae_batch_size", 32);
  dc.ae_learning_rate = cfg_.get_double("detectors.ae_learning_rate", 1e-3);
  dc.seed = cfg_.get_u64("seed", 42);
  if (cfg_.has("detectors.ae_hidden")) {
    dc.ae_hidden.clear();
    for (const auto& w : split_char(cfg_.get("detectors.ae_hidden", ""), ',')) dc.ae_hidden.push_back(std::stoi(w));
  }

  const std::string params = "pca=" + format_double(dc.pca_variance_fraction) +
                             ";trees=" + std::to_string(dc.iforest_trees) +
                             ";sub=" + std::to_string(dc.iforest_subsample) +
                             ";ae_epochs=" + std::to_string(dc.ae_epochs) +
                             ";ae_bs=" + std::to_string(dc.ae_batch_size) +
                             ";ae_lr=" + format_double(dc.ae_learning_rate) +
                             ";seed=" + std::to_string(dc.seed);

  run_stage("score", {in_emb, in_sessions}, params, {out_scores, out_sessions}, [&] {
    const auto embeddings = detectors::load_embeddings(in_emb);
    const auto result = detectors::ensemble(embeddings, dc);
    detectors::write_scores(result, embeddings.session_ids, out_scores);

    auto sessions = model::read_sessions(in_sessions);
    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < embeddings.session_ids.size(); ++i) row_of[embeddings.session_ids[i]] = i;
    for (auto& s : sessions) {
      const auto it = row_of.find(s.session_id);
      if (it == row_of.end()) continue;
      const auto idx = static_cast<Eigen::Index>(it->second);
      model::AnomalyRecord rec;
      for (const auto& det : result.per_detector) {
        rec.per_detector_raw[det.detector_name] = det.raw(idx);
        rec.per_detector_normalized[det.detector_name] = det.normalized(idx);
      }
      rec.ensemble_score = result.ensemble(idx);
      s.anomaly = std::move(rec);
    }
    model::write_sessions(sessions, out_sessions);
  });
}

void Pipeline::tag() {
  const std::string in_sessions = artifact("sessions_scored.jsonl");
  const std::string keyword_table = data_file("tagging.keyword_table", "suspicious_keywords.csv");
  const std::string regex_table = data_file("tagging.regex_table", "technique_regex.csv");
  const std::string out_sessions = artifact("sessions_tagged.jsonl");

  run_stage("tag", {in_sessions, keyword_table, regex_table}, "", {out_sessions}, [&] {
    auto sessions = model::read_sessions(in_sessions);
    const auto keyword_rules = tagging::load_keyword_rules(keyword_table);
    const auto regex_rules = tagging::load_regex_rules(regex_table);
    for (auto& s : sessions) {
      s.keyword_hits = tagging::match_keywords(s, keyword_rules);
      s.tags = tagging::annotate_techniques(s, regex_rules);
    }
    model::write_sessions(sessions, out_sessions);
  });
}

void Pipeline::label() {
  const std::string in_sessions = artifact("sessions_tagged.jsonl");
  const std::string out_sessions = artifact("sessions_labeled.jsonl");
  const std::string out_counts = artifact("class_counts.tsv");

  tagging::LabelPolicy policy;
  policy.abnormal_min_unique_keywords = static_cast<std::uint32_t>(cfg_.get_int("label.abnormal_min", 3));
  policy.normal_max_unique_keywords = static_cast<std::uint32_t>(cfg_.get_int("label.normal_max", 0));

  const std::string params = "abnormal_min=" + std::to_string(policy.abnormal_min_unique_keywords) +
                             ";normal_max=" + std::to_string(policy.normal_max_unique_keywords);

  run_stage("label", {in_sessions}, params, {out_sessions, out_counts}, [&] {
    auto sessions = model::read_sessions(in_sessions);
    std::size_t normal = 0, abnormal = 0, abstained = 0;
    for (auto& s : sessions) {
      s.label = tagging::label_session(s, policy);
      switch (s.label) {
        case model::SessionLabel::Normal:
          ++normal;
          break;
        case model::SessionLabel::Abnormal:
          ++abnormal;
          break;
        default:
          ++abstained;
          break;
      }
    }
    model::write_sessions(sessions, out_sessions);

    std::ofstream out(out_counts, std::ios::binary);
    out << "class\tunique_keywords\tsamples\ttraining_90\ttesting_10\n";
    const auto split_row = [&](const char* name, const char* rule, std::size_t n, bool splits) {
      if (splits) {
        const std::size_t test = n / 10;
        out << name << '\t' << rule << '\t' << n << '\t' << (n - test) << '\t' << test << '\n';
      } else {
        out << name << '\t' << rule << '\t' << n << "\t-\t-\n";
      }
    };
    split_row("normal", "= 0", normal, true);
    split_row("abnormal",
              (">= " + std::to_string(policy.abnormal_min_unique_keywords)).c_str(), abnormal, true);
    split_row("abstained", "in between", abstained, false);
    out << "total\t-\t" << (normal + abnormal + abstained) << '\t' << '-' << '\t' << '-' << '\n';
  });
}

namespace {

std::vector<supervised::LabeledExample> labeled_pool(const std::vector<model::Session>& sessions) {
  std::vector<supervised::LabeledExample> pool;
  for (const auto& s : sessions) {
    if (s.label == model::SessionLabel::Normal) pool.push_back({s.session_id, false});
    if (s.label == model::SessionLabel::Abnormal) pool.push_back({s.session_id, true});
  }
  return pool;
}

}  // namespace

void Pipeline::finetune() {
  const std::string in_sessions = artifact("sessions_labeled.jsonl");
  const std::string in_vocab = artifact("vocab.txt");
  const std::string in_ckpt = artifact("encoder.ckpt");
  const std::string out_metrics = artifact("finetune_metrics.tsv");
  const std::string out_ckpt = artifact("classifier_encoder.ckpt");
  const std::string out_head = artifact("classifier_head.tsv");

  const std::string variant = cfg_.get("finetune.variant", "finetune_contrastive");
  const int spc = cfg_.get_int("finetune.samples_per_class", 32);
  const std::uint64_t seed = cfg_.get_u64("seed", 42);
  const std::string pooling_s = cfg_.get("embed.pooling", "mean");

  const std::string params = "variant=" + variant + ";spc=" + std::to_string(spc) +
                             ";seed=" + std::to_string(seed) + ";pooling=" + pooling_s +
                             ";lr=" + format_double(cfg_.get_double("finetune.learning_rate", 1e-5)) +
                             ";epochs=" + std::to_string(cfg_.get_int("finetune.epochs", 5)) +
                             ";iters=" + std::to_string(cfg_.get_int("finetune.num_iterations", 20));

  run_stage("finetune", {in_sessions, in_vocab, in_ckpt}, params, {out_metrics, out_ckpt, out_head}, [&] {
    const auto sessions = model::read_sessions(in_sessions);
    const auto vocab = wordpiece::load_vocabulary(in_vocab);
    const auto base = encoder::load_checkpoint(in_ckpt);
    const auto pooling = encoder::pooling_from_string(pooling_s);
    const auto corpus = tokenize_sessions(sessions, vocab, base.config().max_seq_len);
    const auto tokens = supervised::build_token_lookup(corpus);
    const auto pool = labeled_pool(sessions);
    const auto split = supervised::make_split(pool, spc, seed);

    supervised::ClassifierModel model = [&] {
      if (variant == "logistic_frozen") {
        return supervised::train_logistic_frozen(base, tokens, split, pooling, {});
      }
      if (variant == "finetune_full") {
        supervised::FinetuneConfig fc;
        fc.learning_rate = cfg_.get_double("finetune.learning_rate", 1e-5);
        fc.epochs = cfg_.get_int("finetune.epochs", 5);
        fc.seed = seed;
        return supervised::finetune_full(base, tokens, split, pooling, fc);
      }
      if (variant == "finetune_contrastive") {
        supervised::ContrastiveConfig cc;
        cc.learning_rate = cfg_.get_double("finetune.learning_rate", 1e-5);
        cc.num_iterations = cfg_.get_int("finetune.num_iterations", 20);
        cc.epochs = cfg_.get_int("finetune.contrastive_epochs", 1);
        cc.seed = seed;
        return supervised::finetune_contrastive(base, tokens, split, pooling, cc);
      }
      throw DataError("unknown finetune.variant: " + variant);
    }();

    const auto metrics = supervised::evaluate(model, tokens, split.test);
    std::ofstream mout(out_metrics, std::ios::binary);
    mout << "variant\tsamples_per_class\tseed\tpooling\tprecision\trecall\tf1\ttp\tfp\tfn\ttn\n";
    mout << variant << '\t' << spc << '\t' << seed << '\t' << pooling_s << '\t'
         << format_double(metrics.precision) << '\t' << format_double(metrics.recall) << '\t'
         << format_double(metrics.f1) << '\t' << metrics.tp << '\t' << metrics.fp << '\t' << metrics.fn << '\t'
         << metrics.tn << '\n';

    encoder::save_checkpoint(model.enc, out_ckpt);
    std::ofstream hout(out_head, std::ios::binary);
    hout << "bias\t" << format_double(model.head.bias) << '\n';
    for (Eigen::Index i = 0; i < model.head.weights.size(); ++i) {
      hout << "w" << i << '\t' << format_double(model.head.weights(i)) << '\n';
    }
  });
}

void Pipeline::sweep() {
  const std::string in_sessions = artifact("sessions_labeled.jsonl");
  const std::string in_vocab = artifact("vocab.txt");
  const std::string in_ckpt = artifact("encoder.ckpt");
  const std::string out_table = artifact("sweep_results.tsv");
  const std::string out_curve = artifact("f1_curve.tsv");

  supervised::SweepConfig sc;
  if (cfg_.has("sweep.samples_per_class")) {
    sc.spc_values.clear();
    for (const auto& v : split_char(cfg_.get("sweep.samples_per_class", ""), ',')) {
      sc.spc_values.push_back(std::stoi(v));
    }
  }
  sc.repeats = cfg_.get_int("sweep.repeats", 5);
  sc.base_seed = cfg_.get_u64("seed", 42);
  sc.run_logistic = cfg_.get_bool("sweep.run_logistic", true);
  sc.run_full = cfg_.get_bool("sweep.run_full", true);
  sc.run_contrastive = cfg_.get_bool("sweep.run_contrastive", true);
  sc.pooling = encoder::pooling_from_string(cfg_.get("embed.pooling", "mean"));
  sc.threads = cfg_.get_int("sweep.threads", 0);
  sc.finetune.learning_rate = cfg_.get_double("finetune.learning_rate", 1e-5);
  sc.finetune.epochs = cfg_.get_int("finetune.epochs", 5);
  sc.contrastive.learning_rate = cfg_.get_double("finetune.learning_rate", 1e-5);
  sc.contrastive.num_iterations = cfg_.get_int("finetune.num_iterations", 20);
  sc.contrastive.epochs = cfg_.get_int("finetune.contrastive_epochs", 1);

  std::string spc_join;
  for (const int v : sc.spc_values) spc_join += std::to_string(v) + ",";
  const std::string params = "spc=" + spc_join + ";repeats=" + std::to_string(sc.repeats) +
                             ";seed=" + std::to_string(sc.base_seed) +
                             ";models=" + std::to_string(sc.run_logistic) + std::to_string(sc.run_full) +
                             std::to_string(sc.run_contrastive) +
                             ";lr=" + format_double(sc.contrastive.learning_rate) +
                             ";iters=" + std::to_string(sc.contrastive.num_iterations);

  run_stage("sweep", {in_sessions, in_vocab, in_ckpt}, params, {out_table, out_curve}, [&] {
    const auto sessions = model::read_sessions(in_sessions);
    const auto vocab = wordpiece::load_vocabulary(in_vocab);
    const auto base = encoder::load_checkpoint(in_ckpt);
    const auto corpus = tokenize_sessions(sessions, vocab, base.config().max_seq_len);
    const auto tokens = supervised::build_token_lookup(corpus);
    const auto pool = labeled_pool(sessions);

    const auto results = supervised::sweep(base, tokens, pool, sc);
    supervised::write_sweep_table(results, out_table);
    supervised::write_f1_curve(results, out_curve);
  });
}

void Pipeline::report() {
  const std::string in_scores = artifact("scores.tsv");
  const std::string in_sessions = artifact("sessions_labeled.jsonl");
  const std::string in_stats = artifact("token_stats.tsv");
  const std::string regex_table = data_file("tagging.regex_table", "technique_regex.csv");
  const std::string report_dir = artifact("report");

  const int bins = cfg_.get_int("report.histogram_bins", 50);
  const int top_k = cfg_.get_int("report.top_anomalies", 100);
  const int top_cmds = cfg_.get_int("report.top_commands", 50);
  const int top_annotated = cfg_.get_int("report.annotated_sessions", 10);

  const std::vector<std::string> outputs = {
      report_dir + "/score_histogram.tsv",   report_dir + "/top_anomalies.tsv",
      report_dir + "/score_vs_tokens.tsv",   report_dir + "/score_vs_lines.tsv",
      report_dir + "/command_scores.tsv",    report_dir + "/technique_histogram.tsv",
      report_dir + "/tactic_histogram.tsv",  report_dir + "/annotated_top.txt",
  };
  const std::string params = "bins=" + std::to_string(bins) + ";topk=" + std::to_string(top_k) +
                             ";cmds=" + std::to_string(top_cmds) + ";annotated=" + std::to_string(top_annotated);

  run_stage("report", {in_scores, in_sessions, in_stats, regex_table}, params, outputs, [&] {
    fs::create_directories(report_dir);
    const auto rows = detectors::read_scores(in_scores);
    const auto sessions = model::read_sessions(in_sessions);
    const auto stats = read_token_stats(in_stats);
    const auto regex_rules = tagging::load_regex_rules(regex_table);

    write_score_histogram(rows, bins, outputs[0]);
    write_top_anomalies(rows, static_cast<std::size_t>(top_k), outputs[1]);
    write_score_vs_tokens(rows, stats, outputs[2]);
    write_score_vs_lines(rows, stats, outputs[3]);
    write_command_scores(rows, sessions, static_cast<std::size_t>(top_cmds), outputs[4]);
    write_histogram_file(tagging::technique_histogram(sessions), "technique_id", outputs[5]);
    write_histogram_file(tagging::tactic_histogram(sessions, regex_rules), "tactic", outputs[6]);
    write_annotated_top(rows, sessions, static_cast<std::size_t>(top_annotated), outputs[7]);
  });
}

void Pipeline::run() {
  parse();
  clean();
  train_tokenizer();
  pretrain();
  embed();
  score();
  tag();
  label();
  if (cfg_.get_bool("finetune.enabled", false)) finetune();
  if (cfg_.get_bool("sweep.enabled", false)) sweep();
  report();
}

}  // namespace shellscope::pipeline
