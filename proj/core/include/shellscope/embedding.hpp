#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "shellscope/encoder.hpp"

namespace shellscope::detectors {

/// N session embeddings of dimension d, with their ids. Detector math runs
/// in double; files store float32 (the training precision).
struct EmbeddingMatrix {
  std::vector<std::string> session_ids;
  Eigen::MatrixXd values;  // N x d
  encoder::Pooling pooling = encoder::Pooling::Mean;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

/// Binary layout (little-endian): magic "SSEMBD01", u8 pooling, u64 N,
/// u64 d, N id strings (u32 length + bytes), then N*d float32 row-major.
void save_embeddings(const EmbeddingMatrix& m, const std::string& path);
EmbeddingMatrix load_embeddings(const std::string& path);

}  // namespace shellscope::detectors
