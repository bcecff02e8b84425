#include "shellscope/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "shellscope/adam.hpp"
#include "shellscope/binio.hpp"
#include "shellscope/errors.hpp"

namespace shellscope::encoder {

namespace {

constexpr double kLayerNormEps = 1e-12;
constexpr double kMaskedLogit = -1e30;
constexpr double kInitStd = 0.02;
const char kCheckpointMagic[9] = "SSENCP01";

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(M_SQRT1_2)));
}

template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x * S(M_SQRT1_2)));
  const S pdf = std::exp(S(-0.5) * x * x) * S(0.3989422804014326779);  // 1/sqrt(2*pi)
  return cdf + x * pdf;
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size <= 0) throw DataError("encoder vocab_size must be positive");
  if (hidden_dim <= 0 || num_layers <= 0 || num_heads <= 0 || ffn_dim <= 0 || max_seq_len <= 0) {
    throw DataError("encoder dimensions must be positive");
  }
  if (hidden_dim % num_heads != 0) throw DataError("hidden_dim must be divisible by num_heads");
  if (mask_prob <= 0.0 || mask_prob >= 1.0) throw DataError("mask_prob must lie in (0, 1)");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw DataError("dropout_rate must lie in [0, 1)");
}

Pooling pooling_from_string(const std::string& s) {
  if (s == "mean") return Pooling::Mean;
  if (s == "cls") return Pooling::Cls;
  throw DataError("unknown pooling: " + s);
}

std::string pooling_to_string(Pooling p) { return p == Pooling::Mean ? "mean" : "cls"; }

template <typename S>
Encoder<S>::Encoder(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  build_layout();
}

template <typename S>
void Encoder<S>::build_layout() {
  std::size_t offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    layout_.push_back({std::move(name), offset, rows, cols});
    offset += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  };
  add("tok_emb", cfg_.vocab_size, cfg_.hidden_dim);
  add("pos_emb", cfg_.max_seq_len, cfg_.hidden_dim);
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "attn.wq", cfg_.hidden_dim, cfg_.hidden_dim);
    add(p + "attn.bq", 1, cfg_.hidden_dim);
    add(p + "attn.wk", cfg_.hidden_dim, cfg_.hidden_dim);
    add(p + "attn.bk", 1, cfg_.hidden_dim);
    add(p + "attn.wv", cfg_.hidden_dim, cfg_.hidden_dim);
    add(p + "attn.bv", 1, cfg_.hidden_dim);
    add(p + "attn.wo", cfg_.hidden_dim, cfg_.hidden_dim);
    add(p + "attn.bo", 1, cfg_.hidden_dim);
    add(p + "ln1.gamma", 1, cfg_.hidden_dim);
    add(p + "ln1.beta", 1, cfg_.hidden_dim);
    add(p + "ffn.w1", cfg_.hidden_dim, cfg_.ffn_dim);
    add(p + "ffn.b1", 1, cfg_.ffn_dim);
    add(p + "ffn.w2", cfg_.ffn_dim, cfg_.hidden_dim);
    add(p + "ffn.b2", 1, cfg_.hidden_dim);
    add(p + "ln2.gamma", 1, cfg_.hidden_dim);
    add(p + "ln2.beta", 1, cfg_.hidden_dim);
  }
  add("mlm_bias", 1, cfg_.vocab_size);
  params_.assign(offset, S(0));
}

template <typename S>
const TensorInfo& Encoder<S>::tensor(const std::string& name) const {
  for (const auto& t : layout_) {
    if (t.name == name) return t;
  }
  throw DataError("unknown parameter tensor: " + name);
}

template <typename S>
void Encoder<S>::init_weights() {
  Rng rng(cfg_.seed);
  for (const auto& t : layout_) {
    S* data = params_.data() + t.offset;
    const bool is_scale = t.name.find("gamma") != std::string::npos;
    const bool is_bias = t.name.find(".b") != std::string::npos || t.name.find("beta") != std::string::npos ||
                         t.name == "mlm_bias";
    if (is_scale) {
      std::fill(data, data + t.size(), S(1));
    } else if (is_bias) {
      std::fill(data, data + t.size(), S(0));
    } else {
      for (std::size_t i = 0; i < t.size(); ++i) data[i] = static_cast<S>(rng.normal(0.0, kInitStd));
    }
  }
}

template <typename S>
bool Encoder<S>::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](S v) { return std::isfinite(v); });
}

namespace {

// rowwise softmax with max subtraction; masked entries hold kMaskedLogit
template <typename M>
void softmax_rows(M& scores) {
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    auto row = scores.row(i);
    const auto max = row.maxCoeff();
    row = (row.array() - max).exp().matrix();
    row /= row.sum();
  }
}

}  // namespace

template <typename S>
typename Encoder<S>::Mat Encoder<S>::forward(const std::vector<int>& ids, const std::vector<std::uint8_t>& mask,
                                             bool training, Rng* dropout_rng, Cache* cache) const {
  const int T = static_cast<int>(ids.size());
  if (T == 0) throw DataError("cannot encode an empty sequence");
  if (mask.size() != ids.size()) throw DataError("attention mask length mismatch");
  if (T > cfg_.max_seq_len) throw DataError("sequence longer than max_seq_len");
  for (int id : ids) {
    if (id < 0 || id >= cfg_.vocab_size) throw DataError("token id out of range: " + std::to_string(id));
  }
  const bool use_dropout = training && cfg_.dropout_rate > 0.0;
  if (use_dropout && dropout_rng == nullptr) throw DataError("training with dropout needs an rng");

  const int d = cfg_.hidden_dim;
  const int H = cfg_.num_heads;
  const int dh = d / H;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  auto dropout_mask = [&](int rows, int cols) {
    Mat m(rows, cols);
    const S keep = S(1) - static_cast<S>(cfg_.dropout_rate);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        m(i, j) = dropout_rng->uniform01() < cfg_.dropout_rate ? S(0) : S(1) / keep;
      }
    }
    return m;
  };

  const auto tok = view("tok_emb");
  const auto pos = view("pos_emb");
  Mat x(T, d);
  for (int i = 0; i < T; ++i) x.row(i) = tok.row(ids[i]) + pos.row(i);
  if (cache) {
    cache->ids = ids;
    cache->mask = mask;
    cache->training = use_dropout;
    cache->layers.assign(static_cast<std::size_t>(cfg_.num_layers), {});
  }
  if (use_dropout) {
    Mat dm = dropout_mask(T, d);
    x.array() *= dm.array();
    if (cache) cache->drop_emb = std::move(dm);
  }
  if (cache) cache->x0 = x;

  auto layer_norm = [&](const Mat& in, const TensorInfo& gamma_t, const TensorInfo& beta_t, Mat* xhat_out,
                        Vec* rstd_out) {
    const auto gamma_map = view(gamma_t);
    const auto beta_map = view(beta_t);
    const auto gamma = gamma_map.row(0);
    const auto beta = beta_map.row(0);
    Mat out(in.rows(), in.cols());
    Mat xhat(in.rows(), in.cols());
    Vec rstd(in.rows());
    for (Eigen::Index i = 0; i < in.rows(); ++i) {
      const S mean = in.row(i).mean();
      const S var = (in.row(i).array() - mean).square().mean();
      const S r = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
      xhat.row(i) = (in.row(i).array() - mean) * r;
      out.row(i) = xhat.row(i).cwiseProduct(gamma) + beta;
      rstd(i) = r;
    }
    if (xhat_out) *xhat_out = std::move(xhat);
    if (rstd_out) *rstd_out = std::move(rstd);
    return out;
  };

  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerCache* lc = cache ? &cache->layers[static_cast<std::size_t>(l)] : nullptr;
    if (lc) lc->xin = x;

    Mat q = x * view(p + "attn.wq");
    q.rowwise() += view(p + "attn.bq").row(0);
    Mat k = x * view(p + "attn.wk");
    k.rowwise() += view(p + "attn.bk").row(0);
    Mat v = x * view(p + "attn.wv");
    v.rowwise() += view(p + "attn.bv").row(0);
    if (lc) {
      lc->q = q;
      lc->k = k;
      lc->v = v;
      lc->attn.resize(static_cast<std::size_t>(H));
    }

    Mat concat(T, d);
    for (int h = 0; h < H; ++h) {
      Mat scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
      for (int j = 0; j < T; ++j) {
        if (!mask[static_cast<std::size_t>(j)]) scores.col(j).setConstant(static_cast<S>(kMaskedLogit));
      }
      softmax_rows(scores);
      concat.middleCols(h * dh, dh) = scores * v.middleCols(h * dh, dh);
      if (lc) lc->attn[static_cast<std::size_t>(h)] = std::move(scores);
    }
    if (lc) lc->concat = concat;

    Mat attn_proj = concat * view(p + "attn.wo");
    attn_proj.rowwise() += view(p + "attn.bo").row(0);
    if (lc) lc->attn_proj = attn_proj;
    if (use_dropout) {
      Mat dm = dropout_mask(T, d);
      attn_proj.array() *= dm.array();
      if (lc) lc->drop_attn = std::move(dm);
    }

    Mat sum1 = x + attn_proj;
    if (lc) lc->sum1 = sum1;
    Mat x1 = layer_norm(sum1, tensor(p + "ln1.gamma"), tensor(p + "ln1.beta"), lc ? &lc->xhat1 : nullptr,
                        lc ? &lc->rstd1 : nullptr);
    if (lc) lc->x1 = x1;

    Mat h_pre = x1 * view(p + "ffn.w1");
    h_pre.rowwise() += view(p + "ffn.b1").row(0);
    Mat h_act = h_pre.unaryExpr([](S v) { return gelu(v); });
    Mat ffn_out = h_act * view(p + "ffn.w2");
    ffn_out.rowwise() += view(p + "ffn.b2").row(0);
    if (lc) {
      lc->h_pre = h_pre;
      lc->h_act = h_act;
      lc->ffn_out = ffn_out;
    }
    if (use_dropout) {
      Mat dm = dropout_mask(T, d);
      ffn_out.array() *= dm.array();
      if (lc) lc->drop_ffn = std::move(dm);
    }

    Mat sum2 = x1 + ffn_out;
    if (lc) lc->sum2 = sum2;
    x = layer_norm(sum2, tensor(p + "ln2.gamma"), tensor(p + "ln2.beta"), lc ? &lc->xhat2 : nullptr,
                   lc ? &lc->rstd2 : nullptr);
    if (lc) lc->xout = x;
  }
  return x;
}

template <typename S>
void Encoder<S>::backward(const Cache& cache, const Mat& dhidden, std::vector<S>& grad) const {
  if (grad.size() != params_.size()) throw DataError("gradient buffer has wrong size");
  const int T = static_cast<int>(cache.ids.size());
  const int d = cfg_.hidden_dim;
  const int H = cfg_.num_heads;
  const int dh = d / H;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  auto gview = [&](const std::string& name) {
    const auto& t = tensor(name);
    return Eigen::Map<Mat>(grad.data() + t.offset, t.rows, t.cols);
  };

  // d(LN(x)) given dY: also accumulates gamma/beta gradients
  auto layer_norm_backward = [&](const Mat& dy, const Mat& xhat, const Vec& rstd, const std::string& prefix) {
    const auto gamma_map = view(prefix + ".gamma");
    const auto gamma = gamma_map.row(0);
    auto dgamma = gview(prefix + ".gamma");
    auto dbeta = gview(prefix + ".beta");
    dgamma.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
    dbeta.row(0) += dy.colwise().sum();
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      const auto dxhat = dy.row(i).cwiseProduct(gamma);
      const S m1 = dxhat.mean();
      const S m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
      dx.row(i) = ((dxhat.array() - m1 - xhat.row(i).array() * m2) * rstd(i)).matrix();
    }
    return dx;
  };

  Mat dx = dhidden;
  for (int l = cfg_.num_layers - 1; l >= 0; --l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];

    // LN2
    Mat dsum2 = layer_norm_backward(dx, lc.xhat2, lc.rstd2, p + "ln2");
    Mat dx1 = dsum2;
    Mat dffn = std::move(dsum2);
    if (cache.training && lc.drop_ffn.size() > 0) dffn.array() *= lc.drop_ffn.array();

    // FFN
    Mat dh_act = dffn * view(p + "ffn.w2").transpose();
    gview(p + "ffn.w2") += lc.h_act.transpose() * dffn;
    gview(p + "ffn.b2").row(0) += dffn.colwise().sum();
    Mat dh_pre = dh_act.cwiseProduct(lc.h_pre.unaryExpr([](S v) { return gelu_grad(v); }));
    dx1 += dh_pre * view(p + "ffn.w1").transpose();
    gview(p + "ffn.w1") += lc.x1.transpose() * dh_pre;
    gview(p + "ffn.b1").row(0) += dh_pre.colwise().sum();

    // LN1
    Mat dsum1 = layer_norm_backward(dx1, lc.xhat1, lc.rstd1, p + "ln1");
    Mat dxin = dsum1;
    Mat dattn_proj = std::move(dsum1);
    if (cache.training && lc.drop_attn.size() > 0) dattn_proj.array() *= lc.drop_attn.array();

    // output projection
    Mat dconcat = dattn_proj * view(p + "attn.wo").transpose();
    gview(p + "attn.wo") += lc.concat.transpose() * dattn_proj;
    gview(p + "attn.bo").row(0) += dattn_proj.colwise().sum();

    // attention heads
    Mat dq(T, d), dk(T, d), dv(T, d);
    for (int h = 0; h < H; ++h) {
      const Mat& attn = lc.attn[static_cast<std::size_t>(h)];
      const auto dch = dconcat.middleCols(h * dh, dh);
      Mat dattn = dch * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = attn.transpose() * dch;
      // softmax backward: ds = a .* (da - rowsum(da .* a))
      Mat ds(T, T);
      for (int i = 0; i < T; ++i) {
        const S dot = dattn.row(i).cwiseProduct(attn.row(i)).sum();
        ds.row(i) = (attn.row(i).array() * (dattn.row(i).array() - dot)).matrix();
      }
      dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh) * scale;
      dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh) * scale;
    }

    dxin += dq * view(p + "attn.wq").transpose();
    dxin += dk * view(p + "attn.wk").transpose();
    dxin += dv * view(p + "attn.wv").transpose();
    gview(p + "attn.wq") += lc.xin.transpose() * dq;
    gview(p + "attn.bq").row(0) += dq.colwise().sum();
    gview(p + "attn.wk") += lc.xin.transpose() * dk;
    gview(p + "attn.bk").row(0) += dk.colwise().sum();
    gview(p + "attn.wv") += lc.xin.transpose() * dv;
    gview(p + "attn.bv").row(0) += dv.colwise().sum();

    dx = std::move(dxin);
  }

  if (cache.training && cache.drop_emb.size() > 0) dx.array() *= cache.drop_emb.array();
  auto dtok = gview("tok_emb");
  auto dpos = gview("pos_emb");
  for (int i = 0; i < T; ++i) {
    dtok.row(cache.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    dpos.row(i) += dx.row(i);
  }
}

template <typename S>
typename Encoder<S>::RowVec Encoder<S>::mlm_logits(const RowVec& hidden_row) const {
  RowVec logits = hidden_row * view("tok_emb").transpose();
  logits += view("mlm_bias").row(0);
  return logits;
}

std::size_t MaskedExample::selected_count() const {
  std::size_t n = 0;
  for (auto s : selected) n += s != 0;
  return n;
}

MaskedExample apply_mlm_masking(const std::vector<int>& ids, double mask_prob, int vocab_size, Rng& rng) {
  MaskedExample ex;
  ex.input_ids = ids;
  ex.original_ids = ids;
  ex.selected.assign(ids.size(), 0);

  std::size_t best_pos = ids.size();
  double best_u = 2.0;
  bool any_selected = false;
  bool any_maskable = false;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < static_cast<int>(wordpiece::kNumSpecials)) continue;  // specials stay put
    any_maskable = true;
    const double u = rng.uniform01();
    if (u < mask_prob) {
      ex.selected[i] = 1;
      any_selected = true;
    }
    if (u < best_u) {
      best_u = u;
      best_pos = i;
    }
  }
  // guarantee progress on short sequences: select the smallest draw
  if (!any_selected && any_maskable) ex.selected[best_pos] = 1;

  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!ex.selected[i]) continue;
    const double r = rng.uniform01();
    if (r < 0.8) {
      ex.input_ids[i] = wordpiece::kMaskId;
    } else if (r < 0.9) {
      ex.input_ids[i] = static_cast<int>(wordpiece::kNumSpecials +
                                         rng.uniform_below(static_cast<std::uint64_t>(
                                             vocab_size - static_cast<int>(wordpiece::kNumSpecials))));
    }  // else: keep the original token
  }
  return ex;
}

template <typename S>
MlmResult mlm_apply(const Encoder<S>& enc, const std::vector<MaskedExample>& batch, bool training,
                    Rng* dropout_rng, std::vector<S>* grad) {
  MlmResult res;
  std::size_t total = 0;
  for (const auto& ex : batch) total += ex.selected_count();
  if (total == 0) {
    res.no_maskable = true;
    return res;
  }
  res.selected = total;

  using Mat = typename Encoder<S>::Mat;
  const auto& tok_t = enc.tensor("tok_emb");
  const auto& bias_t = enc.tensor("mlm_bias");
  Eigen::Map<const Mat> tok(enc.params().data() + tok_t.offset, tok_t.rows, tok_t.cols);
  Eigen::Map<const Mat> bias(enc.params().data() + bias_t.offset, bias_t.rows, bias_t.cols);

  double loss_sum = 0.0;
  std::size_t correct = 0;
  const S inv_total = S(1) / static_cast<S>(total);

  for (const auto& ex : batch) {
    const std::size_t n_sel = ex.selected_count();
    if (n_sel == 0) continue;
    const std::vector<std::uint8_t> mask(ex.input_ids.size(), 1);
    typename Encoder<S>::Cache cache;
    const Mat hidden = enc.forward(ex.input_ids, mask, training, dropout_rng, grad ? &cache : nullptr);

    Mat h_sel(static_cast<Eigen::Index>(n_sel), hidden.cols());
    std::vector<int> targets;
    std::vector<std::size_t> positions;
    targets.reserve(n_sel);
    for (std::size_t i = 0; i < ex.selected.size(); ++i) {
      if (!ex.selected[i]) continue;
      h_sel.row(static_cast<Eigen::Index>(targets.size())) = hidden.row(static_cast<Eigen::Index>(i));
      targets.push_back(ex.original_ids[i]);
      positions.push_back(i);
    }

    Mat logits = h_sel * tok.transpose();
    logits.rowwise() += bias.row(0);
    // softmax + cross entropy per selected position
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      auto row = logits.row(r);
      const S max = row.maxCoeff();
      Eigen::Index argmax = 0;
      row.maxCoeff(&argmax);
      const S lse = std::log((row.array() - max).exp().sum()) + max;
      loss_sum += static_cast<double>(lse - row(targets[static_cast<std::size_t>(r)]));
      correct += argmax == targets[static_cast<std::size_t>(r)];
      row = (row.array() - lse).exp().matrix();  // now holds the softmax
    }

    if (grad) {
      Mat dlogits = logits;  // softmax
      for (Eigen::Index r = 0; r < dlogits.rows(); ++r) {
        dlogits(r, targets[static_cast<std::size_t>(r)]) -= S(1);
      }
      dlogits *= inv_total;

      Mat dhidden = Mat::Zero(hidden.rows(), hidden.cols());
      const Mat dh_sel = dlogits * tok;
      for (std::size_t r = 0; r < positions.size(); ++r) {
        dhidden.row(static_cast<Eigen::Index>(positions[r])) = dh_sel.row(static_cast<Eigen::Index>(r));
      }
      Eigen::Map<Mat> dtok(grad->data() + tok_t.offset, tok_t.rows, tok_t.cols);
      Eigen::Map<Mat> dbias(grad->data() + bias_t.offset, bias_t.rows, bias_t.cols);
      dtok += dlogits.transpose() * h_sel;
      dbias.row(0) += dlogits.colwise().sum();
      enc.backward(cache, dhidden, *grad);
    }
  }

  res.loss = loss_sum / static_cast<double>(total);
  res.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return res;
}

template <typename S>
MlmResult mlm_batch(const Encoder<S>& enc, const std::vector<const wordpiece::TokenSequence*>& batch,
                    Rng& mask_rng, bool training, Rng* dropout_rng, std::vector<S>* grad) {
  if (batch.empty()) throw DataError("MLM batch is empty");
  std::vector<MaskedExample> masked;
  masked.reserve(batch.size());
  for (const auto* seq : batch) {
    masked.push_back(apply_mlm_masking(seq->ids, enc.config().mask_prob, enc.config().vocab_size, mask_rng));
  }
  return mlm_apply(enc, masked, training, dropout_rng, grad);
}

TrainingLog train_mlm(Encoder<float>& enc, const std::vector<wordpiece::TokenSequence>& corpus,
                      const MlmTrainConfig& cfg) {
  TrainingLog log;
  if (cfg.steps == 0) return log;
  if (corpus.empty()) throw DataError("MLM training corpus is empty");
  if (cfg.batch_size <= 0) throw DataError("batch_size must be positive");

  Rng root(cfg.seed);
  Rng order_rng = root.fork();
  Rng mask_rng = root.fork();
  Rng dropout_rng = root.fork();

  std::vector<std::size_t> indices(corpus.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  std::size_t cursor = indices.size();

  Adam<float> adam(enc.params().size(), cfg.learning_rate);
  const int warmup = std::max(1, static_cast<int>(std::ceil(cfg.warmup_fraction * cfg.steps)));
  std::vector<float> grad(enc.params().size());

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<const wordpiece::TokenSequence*> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= indices.size()) {
        order_rng.shuffle(indices);
        cursor = 0;
      }
      batch.push_back(&corpus[indices[cursor++]]);
    }

    std::fill(grad.begin(), grad.end(), 0.0f);
    const MlmResult res = mlm_batch(enc, batch, mask_rng, true, &dropout_rng, &grad);
    if (!std::isfinite(res.loss)) {
      throw NumericError("MLM training diverged at step " + std::to_string(step));
    }
    const double lr_scale = step <= warmup ? static_cast<double>(step) / warmup : 1.0;
    adam.step(enc.params(), grad, lr_scale);
    log.loss.push_back(res.loss);
    log.accuracy.push_back(res.accuracy);
  }
  if (!enc.all_finite()) throw NumericError("non-finite encoder parameters after training");
  return log;
}

template <typename S>
typename Encoder<S>::RowVec pool_hidden(const typename Encoder<S>::Mat& hidden,
                                        const std::vector<std::uint8_t>& mask, Pooling pooling) {
  if (pooling == Pooling::Cls) return hidden.row(0);
  typename Encoder<S>::RowVec sum = Encoder<S>::RowVec::Zero(hidden.cols());
  int count = 0;
  for (Eigen::Index i = 0; i < hidden.rows(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) {
      sum += hidden.row(i);
      ++count;
    }
  }
  if (count == 0) throw DataError("cannot pool a fully padded sequence");
  return sum / static_cast<S>(count);
}

template <typename S>
typename Encoder<S>::Mat pool_backward(const typename Encoder<S>::RowVec& dpooled,
                                       const std::vector<std::uint8_t>& mask, Pooling pooling) {
  typename Encoder<S>::Mat dh =
      Encoder<S>::Mat::Zero(static_cast<Eigen::Index>(mask.size()), dpooled.cols());
  if (pooling == Pooling::Cls) {
    dh.row(0) = dpooled;
    return dh;
  }
  int count = 0;
  for (auto m : mask) count += m != 0;
  if (count == 0) throw DataError("cannot pool a fully padded sequence");
  for (Eigen::Index i = 0; i < dh.rows(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) dh.row(i) = dpooled / static_cast<S>(count);
  }
  return dh;
}

template <typename S>
typename Encoder<S>::RowVec embed_session(const Encoder<S>& enc, const wordpiece::TokenSequence& seq,
                                          Pooling pooling) {
  const std::vector<std::uint8_t> mask(seq.ids.size(), 1);
  const auto hidden = enc.forward(seq.ids, mask, false, nullptr, nullptr);
  return pool_hidden<S>(hidden, mask, pooling);
}

double gradient_check(const EncoderConfig& cfg, const std::vector<wordpiece::TokenSequence>& batch,
                      double epsilon, int samples_per_tensor, std::uint64_t seed) {
  if (cfg.hidden_dim > 16 || cfg.num_layers > 2) {
    throw DataError("gradient_check expects a tiny model (hidden_dim <= 16, num_layers <= 2)");
  }
  if (cfg.dropout_rate != 0.0) throw DataError("gradient_check requires dropout disabled");
  if (batch.empty()) throw DataError("gradient_check needs at least one sequence");

  Encoder<double> enc(cfg);
  enc.init_weights();

  // fix the masking once: the finite-difference loss must be a deterministic
  // function of the parameters
  Rng mask_rng(seed);
  std::vector<MaskedExample> masked;
  for (const auto& seq : batch) {
    masked.push_back(apply_mlm_masking(seq.ids, cfg.mask_prob, cfg.vocab_size, mask_rng));
  }

  std::vector<double> grad(enc.params().size(), 0.0);
  mlm_apply(enc, masked, false, nullptr, &grad);

  auto loss_at = [&]() { return mlm_apply<double>(enc, masked, false, nullptr, nullptr).loss; };

  Rng sample_rng(seed ^ 0xabcdef1234567890ull);
  double max_err = 0.0;
  for (const auto& t : enc.tensors()) {
    for (int s = 0; s < samples_per_tensor; ++s) {
      const std::size_t i = t.offset + sample_rng.uniform_below(t.size());
      const double saved = enc.params()[i];
      enc.params()[i] = saved + epsilon;
      const double lp = loss_at();
      enc.params()[i] = saved - epsilon;
      const double lm = loss_at();
      enc.params()[i] = saved;
      const double fd = (lp - lm) / (2.0 * epsilon);
      const double g = grad[i];
      const double denom = std::max(std::abs(fd), std::abs(g));
      const double err = denom < 1e-8 ? std::abs(fd - g) : std::abs(fd - g) / denom;
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

void save_checkpoint(const Encoder<float>& enc, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, 8);
  const auto& cfg = enc.config();
  write_u32(out, static_cast<std::uint32_t>(cfg.vocab_size));
  write_u32(out, static_cast<std::uint32_t>(cfg.hidden_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg.num_layers));
  write_u32(out, static_cast<std::uint32_t>(cfg.num_heads));
  write_u32(out, static_cast<std::uint32_t>(cfg.ffn_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg.max_seq_len));
  write_f64(out, cfg.dropout_rate);
  write_f64(out, cfg.mask_prob);
  write_u64(out, cfg.seed);
  write_u64(out, enc.params().size());
  for (float v : enc.params()) write_f32(out, v);
  if (!out) throw DataError("write failed: " + path);
}

Encoder<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kCheckpointMagic, 8)) {
    throw DataError("not an encoder checkpoint: " + path);
  }
  EncoderConfig cfg;
  cfg.vocab_size = static_cast<int>(read_u32(in));
  cfg.hidden_dim = static_cast<int>(read_u32(in));
  cfg.num_layers = static_cast<int>(read_u32(in));
  cfg.num_heads = static_cast<int>(read_u32(in));
  cfg.ffn_dim = static_cast<int>(read_u32(in));
  cfg.max_seq_len = static_cast<int>(read_u32(in));
  cfg.dropout_rate = read_f64(in);
  cfg.mask_prob = read_f64(in);
  cfg.seed = read_u64(in);
  const std::uint64_t count = read_u64(in);
  Encoder<float> enc(cfg);
  if (count != enc.params().size()) throw DataError("checkpoint parameter count mismatch");
  for (auto& v : enc.params()) v = read_f32(in);
  return enc;
}

// the pipeline trains in single precision; gradient checks run the same code
// in double
template class Encoder<float>;
template class Encoder<double>;
template MlmResult mlm_apply<float>(const Encoder<float>&, const std::vector<MaskedExample>&, bool, Rng*,
                                    std::vector<float>*);
template MlmResult mlm_apply<double>(const Encoder<double>&, const std::vector<MaskedExample>&, bool, Rng*,
                                     std::vector<double>*);
template MlmResult mlm_batch<float>(const Encoder<float>&, const std::vector<const wordpiece::TokenSequence*>&,
                                    Rng&, bool, Rng*, std::vector<float>*);
template MlmResult mlm_batch<double>(const Encoder<double>&, const std::vector<const wordpiece::TokenSequence*>&,
                                     Rng&, bool, Rng*, std::vector<double>*);
template Encoder<float>::RowVec pool_hidden<float>(const Encoder<float>::Mat&, const std::vector<std::uint8_t>&,
                                                   Pooling);
template Encoder<double>::RowVec pool_hidden<double>(const Encoder<double>::Mat&, const std::vector<std::uint8_t>&,
                                                     Pooling);
template Encoder<float>::Mat pool_backward<float>(const Encoder<float>::RowVec&, const std::vector<std::uint8_t>&,
                                                  Pooling);
template Encoder<double>::Mat pool_backward<double>(const Encoder<double>::RowVec&, const std::vector<std::uint8_t>&,
                                                    Pooling);
template Encoder<float>::RowVec embed_session<float>(const Encoder<float>&, const wordpiece::TokenSequence&, Pooling);
template Encoder<double>::RowVec embed_session<double>(const Encoder<double>&, const wordpiece::TokenSequence&,
                                                       Pooling);

}  // namespace shellscope::encoder
