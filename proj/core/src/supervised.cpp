#include "shellscope/supervised.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include "shellscope/adam.hpp"
#include "shellscope/errors.hpp"
#include "shellscope/rng.hpp"
#include "shellscope/textutil.hpp"

namespace shellscope::supervised {

using encoder::Encoder;
using encoder::Pooling;

LabeledSplit make_split(const std::vector<LabeledExample>& pool, int samples_per_class, std::uint64_t seed) {
  if (samples_per_class <= 0) throw DataError("samples_per_class must be positive");

  std::vector<LabeledExample> normal, abnormal;
  for (const auto& e : pool) (e.abnormal ? abnormal : normal).push_back(e);

  Rng rng(seed);
  LabeledSplit split;
  split.samples_per_class = samples_per_class;
  split.seed = seed;

  auto take = [&](std::vector<LabeledExample>& cls, const char* name) {
    rng.shuffle(cls);
    const std::size_t test_n = cls.size() / 10;
    const std::size_t train_pool = cls.size() - test_n;
    if (train_pool < static_cast<std::size_t>(samples_per_class)) {
      throw DataError(std::string("not enough ") + name + " sessions: training pool holds " +
                      std::to_string(train_pool) + ", need " + std::to_string(samples_per_class));
    }
    for (std::size_t i = 0; i < test_n; ++i) split.test.push_back(cls[i]);
    for (std::size_t i = 0; i < static_cast<std::size_t>(samples_per_class); ++i) {
      split.train.push_back(cls[test_n + i]);
    }
  };
  take(normal, "normal");
  take(abnormal, "abnormal");
  rng.shuffle(split.train);
  return split;
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

LogisticModel train_logistic(const Eigen::MatrixXd& X, const std::vector<int>& y, const LogisticConfig& cfg) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (n == 0 || static_cast<std::size_t>(n) != y.size()) throw DataError("bad logistic training set");

  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) target(i) = y[static_cast<std::size_t>(i)] ? 1.0 : 0.0;

  LogisticModel model;
  model.weights = Eigen::VectorXd::Zero(d);
  model.bias = 0.0;

  std::vector<double> params(static_cast<std::size_t>(d) + 1, 0.0);
  std::vector<double> grad(params.size(), 0.0);
  Adam<double> adam(params.size(), cfg.learning_rate);

  double best_loss = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_w = model.weights;
  double best_b = 0.0;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    Eigen::Map<Eigen::VectorXd> w(params.data(), d);
    const double b = params[static_cast<std::size_t>(d)];
    Eigen::VectorXd p = (X * w).array() + b;
    p = p.unaryExpr([](double z) { return sigmoid(z); });

    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pi = std::clamp(p(i), 1e-12, 1.0 - 1e-12);
      loss -= target(i) * std::log(pi) + (1.0 - target(i)) * std::log(1.0 - pi);
    }
    loss = loss / static_cast<double>(n) + 0.5 * cfg.l2 * w.squaredNorm();
    if (loss < best_loss) {
      best_loss = loss;
      best_w = w;
      best_b = b;
    }

    const Eigen::VectorXd err = (p - target) / static_cast<double>(n);
    Eigen::Map<Eigen::VectorXd> gw(grad.data(), d);
    gw = X.transpose() * err + cfg.l2 * w;
    grad[static_cast<std::size_t>(d)] = err.sum();

    double gmax = std::abs(grad[static_cast<std::size_t>(d)]);
    for (Eigen::Index j = 0; j < d; ++j) gmax = std::max(gmax, std::abs(gw(j)));
    if (gmax < cfg.tol) {
      model.converged = true;
      break;
    }
    adam.step(params, grad);
  }

  Eigen::Map<Eigen::VectorXd> w(params.data(), d);
  if (model.converged) {
    model.weights = w;
    model.bias = params[static_cast<std::size_t>(d)];
  } else {
    model.weights = best_w;  // best iterate, with a warning flag
    model.bias = best_b;
  }
  return model;
}

Eigen::VectorXd logistic_proba(const LogisticModel& model, const Eigen::MatrixXd& X) {
  Eigen::VectorXd z = (X * model.weights).array() + model.bias;
  return z.unaryExpr([](double v) { return sigmoid(v); });
}

std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::LogisticFrozen:
      return "logistic_frozen";
    case Variant::FinetuneFull:
      return "finetune_full";
    case Variant::FinetuneContrastive:
      return "finetune_contrastive";
  }
  throw DataError("invalid classifier variant");
}

TokenLookup build_token_lookup(const std::vector<wordpiece::TokenSequence>& sequences) {
  TokenLookup lookup;
  lookup.reserve(sequences.size());
  for (const auto& s : sequences) lookup[s.session_id] = &s;
  return lookup;
}

namespace {

const wordpiece::TokenSequence& tokens_for(const TokenLookup& tokens, const std::string& session_id) {
  const auto it = tokens.find(session_id);
  if (it == tokens.end()) throw DataError("no token sequence for session " + session_id);
  return *it->second;
}

}  // namespace

Eigen::MatrixXd embed_examples(const Encoder<float>& enc, const TokenLookup& tokens,
                               const std::vector<LabeledExample>& examples, Pooling pooling) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(examples.size()), enc.config().hidden_dim);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto row = encoder::embed_session(enc, tokens_for(tokens, examples[i].session_id), pooling);
    X.row(static_cast<Eigen::Index>(i)) = row.template cast<double>();
  }
  return X;
}

namespace {

std::vector<int> labels_of(const std::vector<LabeledExample>& examples) {
  std::vector<int> y;
  y.reserve(examples.size());
  for (const auto& e : examples) y.push_back(e.abnormal ? 1 : 0);
  return y;
}

}  // namespace

ClassifierModel train_logistic_frozen(const Encoder<float>& enc, const TokenLookup& tokens,
                                      const LabeledSplit& split, Pooling pooling, const LogisticConfig& cfg) {
  ClassifierModel model{Variant::LogisticFrozen, enc, pooling, {}, {}, false};
  const Eigen::MatrixXd X = embed_examples(enc, tokens, split.train, pooling);
  model.head = train_logistic(X, labels_of(split.train), cfg);
  return model;
}

ClassifierModel finetune_full(const Encoder<float>& base, const TokenLookup& tokens, const LabeledSplit& split,
                              Pooling pooling, const FinetuneConfig& cfg) {
  if (split.train.empty()) throw DataError("fine-tuning needs a training split");
  ClassifierModel model{Variant::FinetuneFull, base, pooling, {}, {}, false};
  auto& enc = model.enc;

  Eigen::VectorXd head_w = Eigen::VectorXd::Zero(enc.config().hidden_dim);
  double head_b = 0.0;

  if (cfg.epochs == 0) {
    model.flagged_untrained = true;
    model.head.weights = head_w;
    model.head.bias = head_b;
    return model;
  }

  Rng root(cfg.seed);
  Rng order_rng = root.fork();
  Rng dropout_rng = root.fork();

  const std::size_t n_enc = enc.params().size();
  const Eigen::Index d = enc.config().hidden_dim;
  Adam<float> adam_enc(n_enc, cfg.learning_rate);
  std::vector<double> head_params(static_cast<std::size_t>(d) + 1, 0.0);
  Adam<double> adam_head(head_params.size(), cfg.learning_rate);

  std::vector<float> grad(n_enc);
  std::vector<double> head_grad(head_params.size());
  std::vector<std::size_t> order(split.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double inv_bs = 1.0 / static_cast<double>(stop - start);
      std::fill(grad.begin(), grad.end(), 0.0f);
      std::fill(head_grad.begin(), head_grad.end(), 0.0);
      Eigen::Map<Eigen::VectorXd> w(head_params.data(), d);
      double loss = 0.0;

      for (std::size_t k = start; k < stop; ++k) {
        const auto& ex = split.train[order[k]];
        const auto& seq = tokens_for(tokens, ex.session_id);
        const std::vector<std::uint8_t> mask(seq.ids.size(), 1);
        typename Encoder<float>::Cache cache;
        const auto hidden = enc.forward(seq.ids, mask, true, &dropout_rng, &cache);
        const auto pooled = encoder::pool_hidden<float>(hidden, mask, pooling);
        const Eigen::VectorXd pooled_d = pooled.transpose().cast<double>();

        const double target = ex.abnormal ? 1.0 : 0.0;
        const double p = sigmoid(w.dot(pooled_d) + head_params[static_cast<std::size_t>(d)]);
        const double pc = std::clamp(p, 1e-12, 1.0 - 1e-12);
        loss -= (target * std::log(pc) + (1.0 - target) * std::log(1.0 - pc)) * inv_bs;

        const double derr = (p - target) * inv_bs;
        Eigen::Map<Eigen::VectorXd> gw(head_grad.data(), d);
        gw += derr * pooled_d;
        head_grad[static_cast<std::size_t>(d)] += derr;

        Encoder<float>::RowVec dpooled = (derr * w).transpose().cast<float>();
        const auto dhidden = encoder::pool_backward<float>(dpooled, mask, pooling);
        enc.backward(cache, dhidden, grad);
      }

      if (!std::isfinite(loss)) throw NumericError("fine-tuning diverged");
      adam_enc.step(enc.params(), grad);
      adam_head.step(head_params, head_grad);
      epoch_loss += loss;
      ++batches;
    }
    model.train_loss.push_back(epoch_loss / static_cast<double>(batches));
  }

  Eigen::Map<Eigen::VectorXd> w(head_params.data(), d);
  model.head.weights = w;
  model.head.bias = head_params[static_cast<std::size_t>(d)];
  model.head.converged = true;
  return model;
}

ClassifierModel finetune_contrastive(const Encoder<float>& base, const TokenLookup& tokens,
                                     const LabeledSplit& split, Pooling pooling, const ContrastiveConfig& cfg) {
  if (split.train.empty()) throw DataError("fine-tuning needs a training split");
  ClassifierModel model{Variant::FinetuneContrastive, base, pooling, {}, {}, false};
  auto& enc = model.enc;

  Rng root(cfg.seed);
  Rng pair_rng = root.fork();
  Rng order_rng = root.fork();
  Rng dropout_rng = root.fork();

  // stage 1: Siamese fine-tuning on sampled pairs
  if (cfg.num_iterations > 0 && cfg.epochs > 0) {
    std::vector<std::size_t> same_class[2];
    for (std::size_t i = 0; i < split.train.size(); ++i) {
      same_class[split.train[i].abnormal ? 1 : 0].push_back(i);
    }

    struct Pair {
      std::size_t a, b;
      float target;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < split.train.size(); ++i) {
      const int cls = split.train[i].abnormal ? 1 : 0;
      const auto& own = same_class[cls];
      const auto& other = same_class[1 - cls];
      for (int r = 0; r < cfg.num_iterations; ++r) {
        std::size_t j;
        if (own.size() <= 1) {
          j = i;  // single-example class degenerates to self-pairs
        } else {
          // sample a different member of the class
          std::size_t pos_self = 0;
          while (own[pos_self] != i) ++pos_self;
          std::size_t pick = pair_rng.uniform_below(own.size() - 1);
          if (pick >= pos_self) ++pick;
          j = own[pick];
        }
        pairs.push_back({i, j, 1.0f});
        if (!other.empty()) {
          pairs.push_back({i, other[pair_rng.uniform_below(other.size())], 0.0f});
        }
      }
    }

    Adam<float> adam(enc.params().size(), cfg.learning_rate);
    std::vector<float> grad(enc.params().size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      order_rng.shuffle(pairs);
      double epoch_loss = 0.0;
      std::size_t batches = 0;
      for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t stop = std::min(pairs.size(), start + static_cast<std::size_t>(cfg.batch_size));
        const float inv_bs = 1.0f / static_cast<float>(stop - start);
        std::fill(grad.begin(), grad.end(), 0.0f);
        double loss = 0.0;

        for (std::size_t k = start; k < stop; ++k) {
          const auto& pr = pairs[k];
          const auto& seq_a = tokens_for(tokens, split.train[pr.a].session_id);
          const auto& seq_b = tokens_for(tokens, split.train[pr.b].session_id);
          const std::vector<std::uint8_t> mask_a(seq_a.ids.size(), 1), mask_b(seq_b.ids.size(), 1);

          typename Encoder<float>::Cache cache_a, cache_b;
          const auto ha = enc.forward(seq_a.ids, mask_a, true, &dropout_rng, &cache_a);
          const auto hb = enc.forward(seq_b.ids, mask_b, true, &dropout_rng, &cache_b);
          const auto u = encoder::pool_hidden<float>(ha, mask_a, pooling);
          const auto v = encoder::pool_hidden<float>(hb, mask_b, pooling);

          const float nu = std::max(u.norm(), 1e-12f);
          const float nv = std::max(v.norm(), 1e-12f);
          const float cos = u.dot(v) / (nu * nv);
          const float diff = cos - pr.target;
          loss += static_cast<double>(diff * diff) * inv_bs;

          const float dcos = 2.0f * diff * inv_bs;
          Encoder<float>::RowVec du = dcos * (v / (nu * nv) - (cos / (nu * nu)) * u);
          Encoder<float>::RowVec dv = dcos * (u / (nu * nv) - (cos / (nv * nv)) * v);
          enc.backward(cache_a, encoder::pool_backward<float>(du, mask_a, pooling), grad);
          enc.backward(cache_b, encoder::pool_backward<float>(dv, mask_b, pooling), grad);
        }

        if (!std::isfinite(loss)) throw NumericError("contrastive fine-tuning diverged");
        adam.step(enc.params(), grad);
        epoch_loss += loss;
        ++batches;
      }
      model.train_loss.push_back(epoch_loss / static_cast<double>(batches));
    }
  } else {
    model.flagged_untrained = true;  // stage 1 skipped; reduces to the frozen baseline
  }

  // stage 2: logistic head on the (fine-tuned) frozen embeddings
  const Eigen::MatrixXd X = embed_examples(enc, tokens, split.train, pooling);
  model.head = train_logistic(X, labels_of(split.train), cfg.head);
  return model;
}

EvalMetrics metrics_from_counts(long tp, long fp, long fn, long tn) {
  EvalMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.tn = tn;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

EvalMetrics evaluate(const ClassifierModel& model, const TokenLookup& tokens,
                     const std::vector<LabeledExample>& test) {
  if (test.empty()) throw DataError("test set is empty");
  const Eigen::MatrixXd X = embed_examples(model.enc, tokens, test, model.pooling);
  const Eigen::VectorXd p = logistic_proba(model.head, X);
  long tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const bool pred = p(static_cast<Eigen::Index>(i)) >= 0.5;
    const bool truth = test[i].abnormal;
    if (pred && truth) ++tp;
    if (pred && !truth) ++fp;
    if (!pred && truth) ++fn;
    if (!pred && !truth) ++tn;
  }
  return metrics_from_counts(tp, fp, fn, tn);
}

const SweepCell* find_cell(const SweepResults& results, Variant variant, int spc) {
  for (const auto& c : results.cells) {
    if (c.variant == variant && c.samples_per_class == spc) return &c;
  }
  return nullptr;
}

SweepResults sweep(const Encoder<float>& base, const TokenLookup& tokens,
                   const std::vector<LabeledExample>& pool, const SweepConfig& cfg) {
  SweepResults results;
  results.pooling = cfg.pooling;
  results.repeats = cfg.repeats;

  std::vector<Variant> variants;
  if (cfg.run_logistic) variants.push_back(Variant::LogisticFrozen);
  if (cfg.run_full) variants.push_back(Variant::FinetuneFull);
  if (cfg.run_contrastive) variants.push_back(Variant::FinetuneContrastive);

  for (const auto v : variants) {
    for (const int spc : cfg.spc_values) {
      SweepCell cell;
      cell.variant = v;
      cell.samples_per_class = spc;
      results.cells.push_back(cell);
    }
  }

  std::atomic<std::size_t> next{0};
  const unsigned workers =
      cfg.threads > 0 ? static_cast<unsigned>(cfg.threads) : std::max(1u, std::thread::hardware_concurrency());

  auto run_cell = [&](SweepCell& cell) {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    double psum = 0.0, rsum = 0.0, fsum = 0.0;
    for (int r = 0; r < cfg.repeats; ++r) {
      const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(r);
      const LabeledSplit split = make_split(pool, cell.samples_per_class, seed);
      ClassifierModel model = [&] {
        switch (cell.variant) {
          case Variant::LogisticFrozen:
            return train_logistic_frozen(base, tokens, split, cfg.pooling, cfg.logistic);
          case Variant::FinetuneFull: {
            FinetuneConfig fc = cfg.finetune;
            fc.seed = seed;
            return finetune_full(base, tokens, split, cfg.pooling, fc);
          }
          case Variant::FinetuneContrastive:
          default: {
            ContrastiveConfig cc = cfg.contrastive;
            cc.seed = seed;
            return finetune_contrastive(base, tokens, split, cfg.pooling, cc);
          }
        }
      }();
      const EvalMetrics m = evaluate(model, tokens, split.test);
      cell.runs.push_back(m);
      tp += m.tp;
      fp += m.fp;
      fn += m.fn;
      tn += m.tn;
      psum += m.precision;
      rsum += m.recall;
      fsum += m.f1;
    }
    cell.mean = metrics_from_counts(tp, fp, fn, tn);
    // Table-style averaging: mean of per-run metrics, counts kept as totals
    cell.mean.precision = psum / cfg.repeats;
    cell.mean.recall = rsum / cfg.repeats;
    cell.mean.f1 = fsum / cfg.repeats;
  };

  std::vector<std::thread> threads;
  for (unsigned t = 0; t < workers; ++t) {
    threads.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= results.cells.size()) break;
        run_cell(results.cells[i]);
      }
    });
  }
  for (auto& t : threads) t.join();
  return results;
}

namespace {

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

void write_sweep_table(const SweepResults& results, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open sweep table for writing: " + path);
  out << "# pooling=" << encoder::pooling_to_string(results.pooling) << " repeats=" << results.repeats << "\n";
  out << "samples_per_class"
      << "\tlogistic_frozen_precision\tlogistic_frozen_recall\tlogistic_frozen_f1"
      << "\tfinetune_full_precision\tfinetune_full_recall\tfinetune_full_f1"
      << "\tfinetune_contrastive_precision\tfinetune_contrastive_recall\tfinetune_contrastive_f1\n";

  std::vector<int> spcs;
  for (const auto& c : results.cells) {
    if (std::find(spcs.begin(), spcs.end(), c.samples_per_class) == spcs.end()) {
      spcs.push_back(c.samples_per_class);
    }
  }
  std::sort(spcs.begin(), spcs.end());

  for (const int spc : spcs) {
    out << spc;
    for (const Variant v : {Variant::LogisticFrozen, Variant::FinetuneFull, Variant::FinetuneContrastive}) {
      const SweepCell* cell = find_cell(results, v, spc);
      if (cell) {
        out << '\t' << fmt4(cell->mean.precision) << '\t' << fmt4(cell->mean.recall) << '\t'
            << fmt4(cell->mean.f1);
      } else {
        out << "\t-\t-\t-";
      }
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

void write_f1_curve(const SweepResults& results, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open f1 curve file for writing: " + path);
  out << "samples_per_class\tmodel\tmean_f1\n";
  for (const auto& c : results.cells) {
    out << c.samples_per_class << '\t' << variant_to_string(c.variant) << '\t' << fmt4(c.mean.f1) << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace shellscope::supervised
