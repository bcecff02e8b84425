#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "shellscope/rng.hpp"
#include "shellscope/wordpiece.hpp"

namespace shellscope::encoder {

struct EncoderConfig {
  int vocab_size = 0;
  int hidden_dim = 128;
  int num_layers = 4;
  int num_heads = 4;
  int ffn_dim = 512;
  int max_seq_len = 512;
  double dropout_rate = 0.1;
  double mask_prob = 0.15;
  std::uint64_t seed = 42;

  void validate() const;  // dims positive, hidden divisible by heads, mask_prob in (0,1)
};

/// One named slice of the flat parameter vector.
struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

enum class Pooling { Mean, Cls };

Pooling pooling_from_string(const std::string& s);
std::string pooling_to_string(Pooling p);

/// Transformer encoder pretrained with masked language modeling. Post-norm
/// blocks: x = LN(x + Attn(x)); x = LN(x + FFN(x)), GELU activations,
/// learned positional embeddings, MLM head tied to the token embeddings.
/// All parameters live in one flat vector described by tensors(); training
/// uses S = float, gradient checking S = double.
template <typename S>
class Encoder {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

  explicit Encoder(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }
  std::vector<S>& params() { return params_; }
  const std::vector<S>& params() const { return params_; }
  const std::vector<TensorInfo>& tensors() const { return layout_; }
  const TensorInfo& tensor(const std::string& name) const;

  /// normal(0, 0.02) projections and embeddings, zero biases / layer-norm
  /// offsets, unit layer-norm scales; seeded by config().seed
  void init_weights();

  bool all_finite() const;

  struct LayerCache {
    Mat xin;
    Mat q, k, v;
    std::vector<Mat> attn;  // per-head softmax rows (post-masking)
    Mat concat;
    Mat attn_proj;
    Mat drop_attn;  // inverted-dropout masks, empty in eval mode
    Mat sum1, xhat1, x1;
    Vec rstd1;
    Mat h_pre, h_act, ffn_out;
    Mat drop_ffn;
    Mat sum2, xhat2, xout;
    Vec rstd2;
  };
  struct Cache {
    std::vector<int> ids;
    std::vector<std::uint8_t> mask;
    Mat x0;
    Mat drop_emb;
    std::vector<LayerCache> layers;
    bool training = false;
  };

  /// Last hidden states for one sequence (rows = positions). mask[i] != 0
  /// marks a real position; masked (PAD) keys are never attended. Eval mode
  /// is deterministic; training mode applies seeded dropout when
  /// dropout_rate > 0. Out-of-range ids raise.
  Mat forward(const std::vector<int>& ids, const std::vector<std::uint8_t>& mask, bool training = false,
              Rng* dropout_rng = nullptr, Cache* cache = nullptr) const;

  /// Accumulate parameter gradients of sum(dhidden .* hidden) into `grad`
  /// (same layout as params).
  void backward(const Cache& cache, const Mat& dhidden, std::vector<S>& grad) const;

  /// MLM logits for one hidden-state row: h · E^T + b (tied embeddings).
  RowVec mlm_logits(const RowVec& hidden_row) const;

 private:
  void build_layout();
  Eigen::Map<const Mat> view(const TensorInfo& t) const {
    return Eigen::Map<const Mat>(params_.data() + t.offset, t.rows, t.cols);
  }
  Eigen::Map<const Mat> view(const std::string& name) const { return view(tensor(name)); }

  EncoderConfig cfg_;
  std::vector<S> params_;
  std::vector<TensorInfo> layout_;

  template <typename T>
  friend struct EncoderOps;
};

/// Positions eligible for MLM selection are the non-special ones. Of the
/// selected positions 80% become [MASK], 10% a random token, 10% stay.
struct MaskedExample {
  std::vector<int> input_ids;
  std::vector<int> original_ids;
  std::vector<std::uint8_t> selected;

  std::size_t selected_count() const;
};

MaskedExample apply_mlm_masking(const std::vector<int>& ids, double mask_prob, int vocab_size, Rng& rng);

struct MlmResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t selected = 0;
  bool no_maskable = false;  // flagged when nothing was selectable
};

/// Mean cross-entropy over the selected positions of a pre-masked batch;
/// accumulates parameter gradients when `grad` is given.
template <typename S>
MlmResult mlm_apply(const Encoder<S>& enc, const std::vector<MaskedExample>& batch, bool training,
                    Rng* dropout_rng, std::vector<S>* grad);

/// Sample maskings with `mask_rng`, then score (and optionally differentiate)
/// the batch.
template <typename S>
MlmResult mlm_batch(const Encoder<S>& enc, const std::vector<const wordpiece::TokenSequence*>& batch,
                    Rng& mask_rng, bool training, Rng* dropout_rng, std::vector<S>* grad);

struct MlmTrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 16;
  int steps = 200;
  std::uint64_t seed = 1;
  double warmup_fraction = 0.1;  // linear warmup, then constant
};

struct TrainingLog {
  std::vector<double> loss;      // one entry per step
  std::vector<double> accuracy;  // masked-token accuracy per step
};

/// Seeded, single-stream MLM pretraining. steps = 0 leaves the model
/// untouched. Divergence (non-finite loss) aborts with the step number.
TrainingLog train_mlm(Encoder<float>& enc, const std::vector<wordpiece::TokenSequence>& corpus,
                      const MlmTrainConfig& cfg);

/// Mean over non-PAD positions (default) or the CLS position of the last
/// hidden states.
template <typename S>
typename Encoder<S>::RowVec pool_hidden(const typename Encoder<S>::Mat& hidden,
                                        const std::vector<std::uint8_t>& mask, Pooling pooling);

template <typename S>
typename Encoder<S>::Mat pool_backward(const typename Encoder<S>::RowVec& dpooled,
                                       const std::vector<std::uint8_t>& mask, Pooling pooling);

template <typename S>
typename Encoder<S>::RowVec embed_session(const Encoder<S>& enc, const wordpiece::TokenSequence& seq,
                                          Pooling pooling);

/// Central-finite-difference check of the analytic MLM gradients on a tiny
/// double-precision model; samples `samples_per_tensor` entries from every
/// parameter tensor. Returns the max guarded relative error
/// |fd - g| / max(|fd|, |g|), falling back to the absolute difference when
/// both are below 1e-8. Requires hidden_dim <= 16, num_layers <= 2 and
/// dropout_rate == 0.
double gradient_check(const EncoderConfig& cfg, const std::vector<wordpiece::TokenSequence>& batch,
                      double epsilon, int samples_per_tensor = 4, std::uint64_t seed = 7);

void save_checkpoint(const Encoder<float>& enc, const std::string& path);
Encoder<float> load_checkpoint(const std::string& path);

}  // namespace shellscope::encoder
