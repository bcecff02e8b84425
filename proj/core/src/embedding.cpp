#include "shellscope/embedding.hpp"

#include <fstream>

#include "shellscope/binio.hpp"
#include "shellscope/errors.hpp"

namespace shellscope::detectors {

namespace {
const char kMagic[9] = "SSEMBD01";
}

void save_embeddings(const EmbeddingMatrix& m, const std::string& path) {
  if (m.values.rows() != static_cast<Eigen::Index>(m.session_ids.size())) {
    throw DataError("embedding matrix row count does not match session id count");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open embedding file for writing: " + path);
  out.write(kMagic, 8);
  out.put(m.pooling == encoder::Pooling::Mean ? 0 : 1);
  write_u64(out, static_cast<std::uint64_t>(m.values.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.values.cols()));
  for (const auto& id : m.session_ids) write_string(out, id);
  for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.values.cols(); ++j) {
      write_f32(out, static_cast<float>(m.values(i, j)));
    }
  }
  if (!out) throw DataError("write failed: " + path);
}

EmbeddingMatrix load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding file: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kMagic, 8)) {
    throw DataError("not an embedding file: " + path);
  }
  const int pooling = in.get();
  EmbeddingMatrix m;
  m.pooling = pooling == 0 ? encoder::Pooling::Mean : encoder::Pooling::Cls;
  const std::uint64_t n = read_u64(in);
  const std::uint64_t d = read_u64(in);
  m.session_ids.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) m.session_ids.push_back(read_string(in));
  m.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.values.cols(); ++j) {
      m.values(i, j) = static_cast<double>(read_f32(in));
    }
  }
  return m;
}

}  // namespace shellscope::detectors
