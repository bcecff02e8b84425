// Command-line front end for the session anomaly pipeline. Subcommands map
// onto the pipeline stages plus a few direct utilities (generate, tokenize,
// gradcheck, report-annotated).
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "shellscope/cleaner.hpp"
#include "shellscope/corpus_io.hpp"
#include "shellscope/encoder.hpp"
#include "shellscope/errors.hpp"
#include "shellscope/generator.hpp"
#include "shellscope/parser.hpp"
#include "shellscope/pipeline.hpp"
#include "shellscope/supervised.hpp"
#include "shellscope/tagging.hpp"
#include "shellscope/textutil.hpp"
#include "shellscope/wordpiece.hpp"

namespace fs = std::filesystem;
using namespace shellscope;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string workdir = "out";
  std::string data_dir = "data";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

pipeline::Config load_config(const GlobalArgs& g) {
  pipeline::Config cfg;
  if (!g.config_path.empty()) cfg = pipeline::Config::load(g.config_path);
  if (g.seed_set) cfg.set("seed", std::to_string(g.seed));
  return cfg;
}

pipeline::Pipeline make_pipeline(const GlobalArgs& g) {
  return pipeline::Pipeline(load_config(g), g.workdir, g.data_dir);
}

void report_outcomes(const pipeline::Pipeline& p) {
  for (const auto& o : p.outcomes()) {
    std::cout << (o.cached ? "[cached] " : "[ran]    ") << o.stage << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unix shell session anomaly detection pipeline"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config,-c", g.config_path, "pipeline config file (key = value lines)");
  app.add_option("--workdir,-w", g.workdir, "artifact directory")->capture_default_str();
  app.add_option("--data-dir", g.data_dir, "rule/data file directory")->capture_default_str();
  app.add_option("--seed", g.seed, "override the config seed")->each([&](const std::string&) {
    g.seed_set = true;
  });

  // ---- generate -------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "emit a synthetic raw keystroke corpus with ground truth");
  std::string gen_out = "corpus.jsonl";
  std::string gen_truth = "ground_truth.jsonl";
  int gen_n = 1000;
  gen->add_option("--output,-o", gen_out, "corpus file")->capture_default_str();
  gen->add_option("--truth", gen_truth, "ground truth sidecar file")->capture_default_str();
  gen->add_option("--activities,-n", gen_n, "number of activities")->capture_default_str();

  // ---- stage subcommands ----------------------------------------------
  auto* parse_cmd = app.add_subcommand("parse", "recover command sessions from raw keystroke logs");
  auto* clean_cmd = app.add_subcommand("clean", "apply the cleaning filters and strip subshells");
  auto* traintok_cmd = app.add_subcommand("train-tokenizer", "train the WordPiece vocabulary");
  auto* pretrain_cmd = app.add_subcommand("pretrain", "MLM-pretrain the encoder from scratch");
  auto* embed_cmd = app.add_subcommand("embed", "embed every session with the pretrained encoder");
  auto* score_cmd = app.add_subcommand("score", "run the four-detector ensemble over the embeddings");
  auto* tag_cmd = app.add_subcommand("tag", "match suspicious keywords and annotate techniques");
  auto* label_cmd = app.add_subcommand("label", "assign normal/abnormal/abstained labels");
  auto* finetune_cmd = app.add_subcommand("finetune", "train one supervised classifier variant");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a trained classifier on its test split");
  auto* sweep_cmd = app.add_subcommand("sweep", "training-size sweep over the supervised models");
  auto* report_cmd = app.add_subcommand("report", "emit analysis report files");
  auto* run_cmd = app.add_subcommand("run", "execute the full pipeline with stage caching");

  // ---- tokenize (debug utility) ----------------------------------------
  auto* tokenize_cmd = app.add_subcommand("tokenize", "tokenize text with a trained vocabulary");
  std::string tok_vocab, tok_text;
  tokenize_cmd->add_option("--vocab", tok_vocab, "vocabulary file")->required();
  tokenize_cmd->add_option("--text", tok_text, "text to tokenize")->required();

  // ---- gradcheck --------------------------------------------------------
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference check of the encoder gradients");
  double gc_eps = 1e-5;
  gradcheck_cmd->add_option("--epsilon", gc_eps, "finite difference step")->capture_default_str();

  // ---- report-annotated -------------------------------------------------
  auto* annotated_cmd = app.add_subcommand("report-annotated", "render one session with its annotations");
  std::string ann_session_id;
  annotated_cmd->add_option("--session", ann_session_id, "session id (default: highest ensemble score)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto cfg = load_config(g);
      synth::GeneratorConfig gc;
      gc.num_activities = gen_n;
      gc.seed = cfg.get_u64("seed", 1);
      gc.min_commands = cfg.get_int("generator.min_commands", gc.min_commands);
      gc.max_commands = cfg.get_int("generator.max_commands", gc.max_commands);
      gc.suspicious_injection_rate = cfg.get_double("generator.suspicious_rate", gc.suspicious_injection_rate);
      gc.abstained_injection_rate = cfg.get_double("generator.abstained_rate", gc.abstained_injection_rate);
      gc.outlier_injection_rate = cfg.get_double("generator.outlier_rate", gc.outlier_injection_rate);
      gc.wrap_probability = cfg.get_double("generator.wrap_probability", gc.wrap_probability);
      gc.editor_probability = cfg.get_double("generator.editor_probability", gc.editor_probability);
      gc.subshell_probability = cfg.get_double("generator.subshell_probability", gc.subshell_probability);
      gc.time_prefix_probability = cfg.get_double("generator.time_prefix_probability", gc.time_prefix_probability);
      const auto rules =
          tagging::load_keyword_rules((fs::path(g.data_dir) / "suspicious_keywords.csv").string());
      const auto [activities, truth] = synth::generate(gc, rules);
      model::write_activities(activities, gen_out);
      synth::save_ground_truth(truth, gen_truth);
      std::cout << "wrote " << activities.size() << " activities to " << gen_out << '\n';
      return 0;
    }

    if (tokenize_cmd->parsed()) {
      const auto vocab = wordpiece::load_vocabulary(tok_vocab);
      const auto seq = wordpiece::tokenize(tok_text, vocab, 512);
      for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        if (i) std::cout << ' ';
        std::cout << seq.ids[i];
      }
      std::cout << '\n';
      for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        if (i) std::cout << ' ';
        std::cout << vocab.tokens[static_cast<std::size_t>(seq.ids[i])];
      }
      std::cout << '\n';
      return 0;
    }

    if (gradcheck_cmd->parsed()) {
      encoder::EncoderConfig ec;
      ec.vocab_size = 32;
      ec.hidden_dim = 8;
      ec.num_layers = 2;
      ec.num_heads = 2;
      ec.ffn_dim = 16;
      ec.max_seq_len = 16;
      ec.dropout_rate = 0.0;
      std::vector<wordpiece::TokenSequence> batch;
      for (int s = 0; s < 3; ++s) {
        wordpiece::TokenSequence seq;
        seq.ids.push_back(wordpiece::kClsId);
        for (int i = 0; i < 8; ++i) {
          seq.ids.push_back(static_cast<int>(wordpiece::kNumSpecials) + ((s * 7 + i * 3) % 27));
        }
        seq.ids.push_back(wordpiece::kSepId);
        batch.push_back(std::move(seq));
      }
      const double err = encoder::gradient_check(ec, batch, gc_eps);
      std::cout << "max relative gradient error: " << err << '\n';
      if (err >= 1e-5) {
        std::cerr << "gradient check FAILED (threshold 1e-5)\n";
        return 3;
      }
      return 0;
    }

    if (annotated_cmd->parsed()) {
      auto p = make_pipeline(g);
      const auto sessions = model::read_sessions(p.artifact("sessions_labeled.jsonl"));
      const model::Session* chosen = nullptr;
      if (!ann_session_id.empty()) {
        for (const auto& s : sessions) {
          if (s.session_id == ann_session_id) chosen = &s;
        }
        if (!chosen) throw DataError("no such session: " + ann_session_id);
      } else {
        double best = -1e300;
        for (const auto& s : sessions) {
          if (s.anomaly && s.anomaly->ensemble_score > best) {
            best = s.anomaly->ensemble_score;
            chosen = &s;
          }
        }
        if (!chosen) throw DataError("no scored sessions found; run the score stage first");
      }
      std::cout << tagging::render_annotated(*chosen);
      return 0;
    }

    auto p = make_pipeline(g);
    if (parse_cmd->parsed()) p.parse();
    if (clean_cmd->parsed()) p.clean();
    if (traintok_cmd->parsed()) p.train_tokenizer();
    if (pretrain_cmd->parsed()) p.pretrain();
    if (embed_cmd->parsed()) p.embed();
    if (score_cmd->parsed()) p.score();
    if (tag_cmd->parsed()) p.tag();
    if (label_cmd->parsed()) p.label();
    if (finetune_cmd->parsed()) p.finetune();
    if (evaluate_cmd->parsed()) {
      // re-runs the finetune stage evaluation path against current artifacts
      p.finetune();
      std::ifstream in(p.artifact("finetune_metrics.tsv"));
      std::cout << in.rdbuf();
    }
    if (sweep_cmd->parsed()) p.sweep();
    if (report_cmd->parsed()) p.report();
    if (run_cmd->parsed()) p.run();
    report_outcomes(p);
    return 0;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
