#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "shellscope/encoder.hpp"
#include "shellscope/wordpiece.hpp"

namespace shellscope::supervised {

struct LabeledExample {
  std::string session_id;
  bool abnormal = false;
};

/// Balanced few-shot training set plus the untouched 10% test split.
/// Abstained sessions are excluded upstream.
struct LabeledSplit {
  std::vector<LabeledExample> train;  // exactly samples_per_class per class
  std::vector<LabeledExample> test;   // natural class imbalance
  int samples_per_class = 0;
  std::uint64_t seed = 0;
};

/// Deterministic stratified split: per class, 10% (floor) goes to test, the
/// rest forms the training pool from which samples_per_class examples are
/// drawn. Raises naming the class when a pool is too small.
LabeledSplit make_split(const std::vector<LabeledExample>& pool, int samples_per_class, std::uint64_t seed);

struct LogisticConfig {
  double learning_rate = 0.05;
  int max_iterations = 500;
  double l2 = 1e-3;
  double tol = 1e-7;  // gradient max-norm convergence threshold
};

struct LogisticModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  bool converged = false;
};

/// Full-batch logistic regression with L2 on the weights (not the bias);
/// returns the best iterate when the gradient never reaches tol.
LogisticModel train_logistic(const Eigen::MatrixXd& X, const std::vector<int>& y, const LogisticConfig& cfg);

Eigen::VectorXd logistic_proba(const LogisticModel& model, const Eigen::MatrixXd& X);

enum class Variant { LogisticFrozen, FinetuneFull, FinetuneContrastive };

std::string variant_to_string(Variant v);

struct ClassifierModel {
  Variant variant = Variant::LogisticFrozen;
  encoder::Encoder<float> enc;  // frozen copy, or the fine-tuned weights
  encoder::Pooling pooling = encoder::Pooling::Mean;
  LogisticModel head;
  std::vector<double> train_loss;  // per epoch (fine-tune variants)
  bool flagged_untrained = false;  // zero-epoch / zero-iteration runs
};

using TokenLookup = std::unordered_map<std::string, const wordpiece::TokenSequence*>;
TokenLookup build_token_lookup(const std::vector<wordpiece::TokenSequence>& sequences);

/// Eval-mode embeddings of the given examples, one row per example.
Eigen::MatrixXd embed_examples(const encoder::Encoder<float>& enc, const TokenLookup& tokens,
                               const std::vector<LabeledExample>& examples, encoder::Pooling pooling);

/// Baseline: logistic head on frozen pretrained embeddings.
ClassifierModel train_logistic_frozen(const encoder::Encoder<float>& enc, const TokenLookup& tokens,
                                      const LabeledSplit& split, encoder::Pooling pooling,
                                      const LogisticConfig& cfg);

struct FinetuneConfig {
  double learning_rate = 1e-5;
  int epochs = 5;
  int batch_size = 16;
  std::uint64_t seed = 1;
  LogisticConfig head;  // unused by the joint head, kept for symmetry
};

/// Binary cross-entropy fine-tuning of every encoder parameter plus a
/// logistic head on the pooled embedding.
ClassifierModel finetune_full(const encoder::Encoder<float>& base, const TokenLookup& tokens,
                              const LabeledSplit& split, encoder::Pooling pooling, const FinetuneConfig& cfg);

struct ContrastiveConfig {
  int batch_size = 16;
  double learning_rate = 1e-5;
  int num_iterations = 20;  // positive and negative pairs per anchor
  int epochs = 1;
  std::uint64_t seed = 1;
  LogisticConfig head;
};

/// Two stages: Siamese fine-tuning on sampled same/opposite-label pairs with
/// squared cosine-similarity loss (targets 1/0), then a logistic head on the
/// frozen fine-tuned embeddings. num_iterations = 0 reduces exactly to
/// train_logistic_frozen.
ClassifierModel finetune_contrastive(const encoder::Encoder<float>& base, const TokenLookup& tokens,
                                     const LabeledSplit& split, encoder::Pooling pooling,
                                     const ContrastiveConfig& cfg);

struct EvalMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Confusion counts at decision threshold 0.5; positive class = Abnormal.
EvalMetrics evaluate(const ClassifierModel& model, const TokenLookup& tokens,
                     const std::vector<LabeledExample>& test);

EvalMetrics metrics_from_counts(long tp, long fp, long fn, long tn);

struct SweepConfig {
  std::vector<int> spc_values = {16, 32, 64, 128, 256, 512, 1024, 2048};
  int repeats = 5;
  std::uint64_t base_seed = 1;
  bool run_logistic = true;
  bool run_full = true;
  bool run_contrastive = true;
  encoder::Pooling pooling = encoder::Pooling::Mean;
  LogisticConfig logistic;
  FinetuneConfig finetune;
  ContrastiveConfig contrastive;
  int threads = 0;  // 0 = hardware concurrency
};

struct SweepCell {
  Variant variant = Variant::LogisticFrozen;
  int samples_per_class = 0;
  EvalMetrics mean;
  std::vector<EvalMetrics> runs;
};

struct SweepResults {
  std::vector<SweepCell> cells;
  encoder::Pooling pooling = encoder::Pooling::Mean;
  int repeats = 0;
};

/// Mean metrics per (model, samples_per_class) cell over `repeats` seeded
/// runs; all models share the same split per repeat. Cells run in parallel,
/// each cell is a deterministic single stream.
SweepResults sweep(const encoder::Encoder<float>& base, const TokenLookup& tokens,
                   const std::vector<LabeledExample>& pool, const SweepConfig& cfg);

const SweepCell* find_cell(const SweepResults& results, Variant variant, int spc);

/// One row per samples-per-class value, three metric columns per model.
void write_sweep_table(const SweepResults& results, const std::string& path);

/// Plot data: spc vs mean F1 per model.
void write_f1_curve(const SweepResults& results, const std::string& path);

}  // namespace shellscope::supervised
