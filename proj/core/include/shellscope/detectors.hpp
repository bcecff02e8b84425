#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "shellscope/embedding.hpp"

namespace shellscope::detectors {

struct DetectorScores {
  std::string detector_name;  // pca | iforest | copod | autoencoder
  Eigen::VectorXd raw;
  Eigen::VectorXd normalized;
};

struct EnsembleConfig {
  double pca_variance_fraction = 0.9;
  int iforest_trees = 100;
  int iforest_subsample = 256;
  std::vector<int> ae_hidden = {64, 16, 64};  // symmetric MLP between the d-wide ends
  int ae_epochs = 100;
  int ae_batch_size = 32;
  double ae_learning_rate = 1e-3;
  std::uint64_t seed = 1;
};

struct EnsembleResult {
  std::array<DetectorScores, 4> per_detector;  // pca, iforest, copod, autoencoder
  Eigen::VectorXd ensemble;                    // mean of the four normalized scores
  std::vector<std::size_t> ranking;            // indices by descending ensemble score
};

/// Eigenvalue-weighted squared projections onto the principal components
/// covering `variance_fraction` of the variance. Zero-eigenvalue components
/// are dropped (rank-deficient covariance). Sign of eigenvectors does not
/// affect scores.
Eigen::VectorXd pca_detector(const Eigen::MatrixXd& X, double variance_fraction);

/// Standard isolation forest: random feature, random split value between the
/// feature min/max on the node's sample, depth ceiling ceil(log2(subsample)),
/// path lengths adjusted by c(m) = 2(H(m-1) - (m-1)/m) at unisolated leaves.
/// Raw score = 2^(-E[h(x)] / c(subsample)).
Eigen::VectorXd iforest_detector(const Eigen::MatrixXd& X, int num_trees, int subsample, std::uint64_t seed);

/// average path-length adjustment; exact harmonic numbers, c(2) = 1
double iforest_c(std::size_t m);

/// Parameter-free copula-based detector: per dimension, -ln of the left /
/// right / skewness-corrected empirical tail probabilities summed across
/// dimensions; raw score = max of the three aggregates.
Eigen::VectorXd copod_detector(const Eigen::MatrixXd& X);

/// Symmetric MLP autoencoder (GELU hidden activations, linear output) on
/// standardized inputs; raw score = squared reconstruction error per row.
Eigen::VectorXd autoencoder_detector(const Eigen::MatrixXd& X, const std::vector<int>& hidden_widths,
                                     int epochs, std::uint64_t seed, int batch_size = 32,
                                     double learning_rate = 1e-3);

/// Central-finite-difference check of the autoencoder backward pass on a
/// tiny double-precision net; returns the max guarded relative error.
double autoencoder_gradient_check(int input_dim, const std::vector<int>& hidden_widths, std::uint64_t seed,
                                  double epsilon);

/// z-score with the population standard deviation; constant input maps to
/// all zeros.
Eigen::VectorXd normalize_scores(const Eigen::VectorXd& raw);

/// Run all four detectors, normalize each, average, rank (ties broken by
/// input order).
EnsembleResult ensemble(const EmbeddingMatrix& embeddings, const EnsembleConfig& config);

/// Tab-separated score file: session_id, four raw, four normalized,
/// ensemble, rank (column order documented in docs/FORMATS.md).
void write_scores(const EnsembleResult& result, const std::vector<std::string>& session_ids,
                  const std::string& path);

struct ScoreRow {
  std::string session_id;
  std::array<double, 4> raw;
  std::array<double, 4> normalized;
  double ensemble = 0.0;
  std::size_t rank = 0;
};
std::vector<ScoreRow> read_scores(const std::string& path);

inline constexpr std::array<const char*, 4> kDetectorNames = {"pca", "iforest", "copod", "autoencoder"};

}  // namespace shellscope::detectors
