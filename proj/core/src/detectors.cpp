#include "shellscope/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "shellscope/adam.hpp"
#include "shellscope/errors.hpp"
#include "shellscope/rng.hpp"
#include "shellscope/textutil.hpp"

namespace shellscope::detectors {

// ---------------------------------------------------------------- PCA ----

Eigen::VectorXd pca_detector(const Eigen::MatrixXd& X, double variance_fraction) {
  if (variance_fraction <= 0.0 || variance_fraction > 1.0) {
    throw DataError("variance_fraction must lie in (0, 1]");
  }
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (n < 2) throw DataError("PCA detector needs at least two rows");

  const Eigen::RowVectorXd mean = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("PCA eigendecomposition failed");
  // ascending eigenvalues; walk from the top
  const Eigen::VectorXd evals = solver.eigenvalues();
  const Eigen::MatrixXd evecs = solver.eigenvectors();

  const double total = std::max(evals.sum(), 0.0);
  const double eps = std::max(evals(d - 1), 0.0) * 1e-12;
  Eigen::VectorXd scores = Eigen::VectorXd::Zero(n);
  if (total <= 0.0) return scores;  // identical rows: all scores equal

  double covered = 0.0;
  for (Eigen::Index j = d - 1; j >= 0; --j) {
    const double lambda = evals(j);
    if (lambda <= eps) break;  // rank-deficient tail is dropped
    const Eigen::VectorXd proj = centered * evecs.col(j);
    scores += proj.cwiseProduct(proj) / lambda;
    covered += lambda;
    if (covered / total >= variance_fraction) break;
  }
  return scores;
}

// --------------------------------------------------- isolation forest ----

namespace {

double harmonic(std::size_t n) {
  double h = 0.0;
  for (std::size_t i = 1; i <= n; ++i) h += 1.0 / static_cast<double>(i);
  return h;
}

}  // namespace

double iforest_c(std::size_t m) {
  if (m <= 1) return 0.0;
  return 2.0 * (harmonic(m - 1) - static_cast<double>(m - 1) / static_cast<double>(m));
}

namespace {

struct IsoNode {
  int feature = -1;     // -1 marks a leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  std::size_t size = 0;  // leaf sample count
};

class IsoTree {
 public:
  IsoTree(const Eigen::MatrixXd& X, std::vector<Eigen::Index>& sample, int max_depth, Rng& rng) : X_(X) {
    root_ = build(sample, 0, sample.size(), 0, max_depth, rng);
  }

  double path_length(const Eigen::RowVectorXd& x) const {
    int node = root_;
    double depth = 0.0;
    while (nodes_[static_cast<std::size_t>(node)].feature >= 0) {
      const auto& nd = nodes_[static_cast<std::size_t>(node)];
      node = x(nd.feature) < nd.threshold ? nd.left : nd.right;
      depth += 1.0;
    }
    return depth + iforest_c(nodes_[static_cast<std::size_t>(node)].size);
  }

 private:
  int build(std::vector<Eigen::Index>& sample, std::size_t begin, std::size_t end, int depth, int max_depth,
            Rng& rng) {
    const std::size_t n = end - begin;
    if (n <= 1 || depth >= max_depth) return leaf(n);

    // features with spread on this node's sample
    std::vector<int> usable;
    for (Eigen::Index f = 0; f < X_.cols(); ++f) {
      double lo = X_(sample[begin], f), hi = lo;
      for (std::size_t i = begin + 1; i < end; ++i) {
        lo = std::min(lo, X_(sample[i], f));
        hi = std::max(hi, X_(sample[i], f));
      }
      if (hi > lo) usable.push_back(static_cast<int>(f));
    }
    if (usable.empty()) return leaf(n);

    const int f = usable[rng.uniform_below(usable.size())];
    double lo = X_(sample[begin], f), hi = lo;
    for (std::size_t i = begin + 1; i < end; ++i) {
      lo = std::min(lo, X_(sample[i], f));
      hi = std::max(hi, X_(sample[i], f));
    }
    const double split = rng.uniform(lo, hi);

    auto mid_it = std::partition(sample.begin() + static_cast<std::ptrdiff_t>(begin),
                                 sample.begin() + static_cast<std::ptrdiff_t>(end),
                                 [&](Eigen::Index r) { return X_(r, f) < split; });
    const std::size_t mid = static_cast<std::size_t>(mid_it - sample.begin());
    if (mid == begin || mid == end) return leaf(n);  // degenerate split

    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({f, split, -1, -1, 0});
    const int l = build(sample, begin, mid, depth + 1, max_depth, rng);
    const int r = build(sample, mid, end, depth + 1, max_depth, rng);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  int leaf(std::size_t n) {
    nodes_.push_back({-1, 0.0, -1, -1, n});
    return static_cast<int>(nodes_.size() - 1);
  }

  const Eigen::MatrixXd& X_;
  std::vector<IsoNode> nodes_;
  int root_ = -1;
};

}  // namespace

Eigen::VectorXd iforest_detector(const Eigen::MatrixXd& X, int num_trees, int subsample, std::uint64_t seed) {
  const Eigen::Index n = X.rows();
  if (n < 2) throw DataError("isolation forest needs at least two rows");
  if (num_trees <= 0 || subsample <= 1) throw DataError("bad isolation forest parameters");

  const std::size_t psi = std::min<std::size_t>(static_cast<std::size_t>(subsample), static_cast<std::size_t>(n));
  const int max_depth = static_cast<int>(std::ceil(std::log2(static_cast<double>(psi))));
  Rng rng(seed);

  std::vector<IsoTree> trees;
  trees.reserve(static_cast<std::size_t>(num_trees));
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  for (int t = 0; t < num_trees; ++t) {
    rng.shuffle(all);  // subsample without replacement
    std::vector<Eigen::Index> sample(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(psi));
    trees.emplace_back(X, sample, max_depth, rng);
  }

  const double c_psi = std::max(iforest_c(psi), 1e-12);
  Eigen::VectorXd scores(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mean_path = 0.0;
    for (const auto& tree : trees) mean_path += tree.path_length(X.row(i));
    mean_path /= static_cast<double>(num_trees);
    scores(i) = std::pow(2.0, -mean_path / c_psi);
  }
  return scores;
}

// -------------------------------------------------------------- COPOD ----

Eigen::VectorXd copod_detector(const Eigen::MatrixXd& X) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (n < 2) throw DataError("COPOD needs at least two rows");

  Eigen::VectorXd left = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd right = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd corrected = Eigen::VectorXd::Zero(n);

  std::vector<double> sorted(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) sorted[static_cast<std::size_t>(i)] = X(i, j);
    std::sort(sorted.begin(), sorted.end());

    // sample skewness (population form) decides which tail the corrected
    // aggregate uses for this dimension
    const double mean = X.col(j).mean();
    const double m2 = (X.col(j).array() - mean).square().mean();
    const double m3 = (X.col(j).array() - mean).cube().mean();
    const bool use_left = m2 > 0.0 ? (m3 / std::pow(m2, 1.5)) < 0.0 : false;

    for (Eigen::Index i = 0; i < n; ++i) {
      const double x = X(i, j);
      // empirical CDF: fraction of samples <= x (left), >= x (right)
      const auto le = std::upper_bound(sorted.begin(), sorted.end(), x) - sorted.begin();
      const auto ge = sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), x);
      const double p_left = static_cast<double>(le) / static_cast<double>(n);
      const double p_right = static_cast<double>(ge) / static_cast<double>(n);
      left(i) += -std::log(p_left);
      right(i) += -std::log(p_right);
      corrected(i) += -std::log(use_left ? p_left : p_right);
    }
  }

  Eigen::VectorXd scores(n);
  for (Eigen::Index i = 0; i < n; ++i) scores(i) = std::max({left(i), right(i), corrected(i)});
  return scores;
}

// -------------------------------------------------------- autoencoder ----

namespace {

// small dense MLP with GELU hidden activations and linear output; double
// precision throughout
class Mlp {
 public:
  Mlp(const std::vector<int>& widths, Rng& rng) : widths_(widths) {
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      layout_.push_back(params_.size());
      const std::size_t wn = static_cast<std::size_t>(widths[l]) * static_cast<std::size_t>(widths[l + 1]);
      for (std::size_t i = 0; i < wn; ++i) params_.push_back(rng.normal(0.0, 0.05));
      for (int i = 0; i < widths[l + 1]; ++i) params_.push_back(0.0);
    }
  }

  std::vector<double>& params() { return params_; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& in, std::vector<Eigen::MatrixXd>* cache_pre = nullptr,
                          std::vector<Eigen::MatrixXd>* cache_act = nullptr) const {
    Eigen::MatrixXd x = in;
    const std::size_t L = widths_.size() - 1;
    for (std::size_t l = 0; l < L; ++l) {
      if (cache_act) cache_act->push_back(x);
      Eigen::MatrixXd z = x * weight(l);
      z.rowwise() += bias(l);
      if (cache_pre) cache_pre->push_back(z);
      if (l + 1 < L) {
        x = z.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
      } else {
        x = std::move(z);
      }
    }
    return x;
  }

  // backward for 0.5 * ||out - target||^2 summed over the batch
  void backward(const Eigen::MatrixXd& dout, const std::vector<Eigen::MatrixXd>& pre,
                const std::vector<Eigen::MatrixXd>& act, std::vector<double>& grad) const {
    const std::size_t L = widths_.size() - 1;
    Eigen::MatrixXd dz = dout;
    for (std::size_t l = L; l-- > 0;) {
      if (l + 1 < L) {
        const auto& z = pre[l];
        dz = dz.cwiseProduct(z.unaryExpr([](double v) {
          const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
          const double pdf = std::exp(-0.5 * v * v) * 0.3989422804014326779;
          return cdf + v * pdf;
        }));
      }
      weight_grad(l, grad) += act[l].transpose() * dz;
      bias_grad(l, grad) += dz.colwise().sum();
      if (l > 0) dz = (dz * weight(l).transpose()).eval();
    }
  }

 private:
  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t l) const {
    return {params_.data() + layout_[l], widths_[l], widths_[l + 1]};
  }
  Eigen::Map<const Eigen::RowVectorXd> bias(std::size_t l) const {
    return {params_.data() + layout_[l] + static_cast<std::size_t>(widths_[l]) * widths_[l + 1],
            widths_[l + 1]};
  }
  Eigen::Map<Eigen::MatrixXd> weight_grad(std::size_t l, std::vector<double>& g) const {
    return {g.data() + layout_[l], widths_[l], widths_[l + 1]};
  }
  Eigen::Map<Eigen::RowVectorXd> bias_grad(std::size_t l, std::vector<double>& g) const {
    return {g.data() + layout_[l] + static_cast<std::size_t>(widths_[l]) * widths_[l + 1], widths_[l + 1]};
  }

  std::vector<int> widths_;
  std::vector<double> params_;
  std::vector<std::size_t> layout_;
};

}  // namespace

Eigen::VectorXd autoencoder_detector(const Eigen::MatrixXd& X, const std::vector<int>& hidden_widths,
                                     int epochs, std::uint64_t seed, int batch_size, double learning_rate) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (n < 2) throw DataError("autoencoder needs at least two rows");
  if (hidden_widths.empty()) throw DataError("autoencoder needs at least one hidden layer");
  const int bottleneck = *std::min_element(hidden_widths.begin(), hidden_widths.end());
  if (bottleneck >= d) throw DataError("autoencoder bottleneck must be narrower than the input");

  // standardize with the training mean/sigma per dimension
  const Eigen::RowVectorXd mean = X.colwise().mean();
  Eigen::RowVectorXd sigma = ((X.rowwise() - mean).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (sigma(j) <= 0.0) sigma(j) = 1.0;
  }
  Eigen::MatrixXd Z = X.rowwise() - mean;
  for (Eigen::Index j = 0; j < d; ++j) Z.col(j) /= sigma(j);

  std::vector<int> widths;
  widths.push_back(static_cast<int>(d));
  widths.insert(widths.end(), hidden_widths.begin(), hidden_widths.end());
  widths.push_back(static_cast<int>(d));

  Rng rng(seed);
  Mlp net(widths, rng);
  Adam<double> adam(net.params().size(), learning_rate);
  std::vector<double> grad(net.params().size());

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int bs = std::max(1, std::min<int>(batch_size, static_cast<int>(n)));

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(bs)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(bs));
      Eigen::MatrixXd batch(static_cast<Eigen::Index>(stop - start), d);
      for (std::size_t i = start; i < stop; ++i) {
        batch.row(static_cast<Eigen::Index>(i - start)) = Z.row(order[i]);
      }
      std::vector<Eigen::MatrixXd> pre, act;
      const Eigen::MatrixXd out = net.forward(batch, &pre, &act);
      const Eigen::MatrixXd diff = out - batch;
      const double loss = diff.squaredNorm() / static_cast<double>(batch.rows());
      if (!std::isfinite(loss)) {
        throw NumericError("autoencoder training diverged at epoch " + std::to_string(epoch));
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      net.backward(diff * (2.0 / static_cast<double>(batch.rows())), pre, act, grad);
      adam.step(net.params(), grad);
    }
  }

  const Eigen::MatrixXd recon = net.forward(Z);
  return (recon - Z).rowwise().squaredNorm();
}

double autoencoder_gradient_check(int input_dim, const std::vector<int>& hidden_widths, std::uint64_t seed,
                                  double epsilon) {
  std::vector<int> widths;
  widths.push_back(input_dim);
  widths.insert(widths.end(), hidden_widths.begin(), hidden_widths.end());
  widths.push_back(input_dim);

  Rng rng(seed);
  Mlp net(widths, rng);
  Eigen::MatrixXd batch(3, input_dim);
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    for (Eigen::Index j = 0; j < batch.cols(); ++j) batch(i, j) = rng.normal();
  }

  auto loss_at = [&]() {
    const Eigen::MatrixXd out = net.forward(batch);
    return (out - batch).squaredNorm();
  };

  std::vector<Eigen::MatrixXd> pre, act;
  const Eigen::MatrixXd out = net.forward(batch, &pre, &act);
  std::vector<double> grad(net.params().size(), 0.0);
  net.backward(2.0 * (out - batch), pre, act, grad);

  double max_err = 0.0;
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const double saved = net.params()[i];
    net.params()[i] = saved + epsilon;
    const double lp = loss_at();
    net.params()[i] = saved - epsilon;
    const double lm = loss_at();
    net.params()[i] = saved;
    const double fd = (lp - lm) / (2.0 * epsilon);
    const double denom = std::max(std::abs(fd), std::abs(grad[i]));
    const double err = denom < 1e-8 ? std::abs(fd - grad[i]) : std::abs(fd - grad[i]) / denom;
    max_err = std::max(max_err, err);
  }
  return max_err;
}

// ------------------------------------------------- normalize, ensemble ----

Eigen::VectorXd normalize_scores(const Eigen::VectorXd& raw) {
  const Eigen::Index n = raw.size();
  if (n < 1) throw DataError("cannot normalize an empty score vector");
  if (raw.maxCoeff() == raw.minCoeff()) return Eigen::VectorXd::Zero(n);
  const double mean = raw.mean();
  const double sigma = std::sqrt((raw.array() - mean).square().mean());
  return (raw.array() - mean) / sigma;
}

EnsembleResult ensemble(const EmbeddingMatrix& embeddings, const EnsembleConfig& config) {
  const Eigen::MatrixXd& X = embeddings.values;
  if (X.rows() < 2) throw DataError("ensemble needs at least two embeddings");

  EnsembleResult result;
  result.per_detector[0].detector_name = "pca";
  result.per_detector[0].raw = pca_detector(X, config.pca_variance_fraction);
  result.per_detector[1].detector_name = "iforest";
  result.per_detector[1].raw = iforest_detector(X, config.iforest_trees, config.iforest_subsample, config.seed);
  result.per_detector[2].detector_name = "copod";
  result.per_detector[2].raw = copod_detector(X);
  result.per_detector[3].detector_name = "autoencoder";
  result.per_detector[3].raw = autoencoder_detector(X, config.ae_hidden, config.ae_epochs, config.seed + 1,
                                                    config.ae_batch_size, config.ae_learning_rate);

  result.ensemble = Eigen::VectorXd::Zero(X.rows());
  for (auto& det : result.per_detector) {
    det.normalized = normalize_scores(det.raw);
    result.ensemble += det.normalized;
  }
  result.ensemble /= 4.0;

  result.ranking.resize(static_cast<std::size_t>(X.rows()));
  std::iota(result.ranking.begin(), result.ranking.end(), 0);
  std::stable_sort(result.ranking.begin(), result.ranking.end(), [&](std::size_t a, std::size_t b) {
    return result.ensemble(static_cast<Eigen::Index>(a)) > result.ensemble(static_cast<Eigen::Index>(b));
  });
  return result;
}

void write_scores(const EnsembleResult& result, const std::vector<std::string>& session_ids,
                  const std::string& path) {
  if (static_cast<Eigen::Index>(session_ids.size()) != result.ensemble.size()) {
    throw DataError("session id count does not match score count");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open score file for writing: " + path);
  out << "session_id\tpca_raw\tiforest_raw\tcopod_raw\tautoencoder_raw"
         "\tpca_norm\tiforest_norm\tcopod_norm\tautoencoder_norm\tensemble\trank\n";
  // rank[i] = position of session i in the descending ranking
  std::vector<std::size_t> rank_of(session_ids.size());
  for (std::size_t pos = 0; pos < result.ranking.size(); ++pos) rank_of[result.ranking[pos]] = pos + 1;
  for (std::size_t i = 0; i < session_ids.size(); ++i) {
    const auto idx = static_cast<Eigen::Index>(i);
    out << session_ids[i];
    for (const auto& det : result.per_detector) out << '\t' << format_double(det.raw(idx));
    for (const auto& det : result.per_detector) out << '\t' << format_double(det.normalized(idx));
    out << '\t' << format_double(result.ensemble(idx)) << '\t' << rank_of[i] << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

std::vector<ScoreRow> read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open score file: " + path);
  std::vector<ScoreRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || trim(line).empty()) continue;  // header
    const auto fields = split_char(line, '\t');
    if (fields.size() != 11) throw DataError("bad score row", line_no);
    ScoreRow r;
    r.session_id = fields[0];
    for (int k = 0; k < 4; ++k) r.raw[static_cast<std::size_t>(k)] = std::stod(fields[static_cast<std::size_t>(1 + k)]);
    for (int k = 0; k < 4; ++k) {
      r.normalized[static_cast<std::size_t>(k)] = std::stod(fields[static_cast<std::size_t>(5 + k)]);
    }
    r.ensemble = std::stod(fields[9]);
    r.rank = std::stoul(fields[10]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace shellscope::detectors
