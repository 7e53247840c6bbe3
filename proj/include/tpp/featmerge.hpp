#ifndef TPP_FEATMERGE_HPP
#define TPP_FEATMERGE_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "tpp/binio.hpp"
#include "tpp/gmm.hpp"
#include "tpp/matrix.hpp"

namespace tpp {

// Learned grouping of feature dimensions: source dimension i belongs to
// clique cluster_of[i]; reduced coordinate j sums its clique and divides by
// sqrt(|clique_j|).
struct MergeMap {
  std::size_t source_dim = 0;            // D
  std::size_t target_dim = 0;            // k
  std::vector<std::size_t> cluster_of;   // length D, entries in [0, k)
  std::vector<double> norms;             // length k, sqrt of clique size

  static MergeMap from_assignments(std::size_t target_dim,
                                   std::vector<std::size_t> cluster_of) {
    MergeMap map;
    map.source_dim = cluster_of.size();
    map.target_dim = target_dim;
    map.cluster_of = std::move(cluster_of);
    std::vector<std::size_t> sizes(target_dim, 0);
    for (std::size_t c : map.cluster_of) {
      if (c >= target_dim) throw std::invalid_argument("MergeMap: cluster index out of range");
      ++sizes[c];
    }
    map.norms.resize(target_dim);
    for (std::size_t j = 0; j < target_dim; ++j) {
      if (sizes[j] == 0) throw std::invalid_argument("MergeMap: empty clique");
      map.norms[j] = std::sqrt(static_cast<double>(sizes[j]));
    }
    return map;
  }
};

// Per-class average pooling of the rows of v; row c of the result is the mean
// of all samples labelled c. Accumulation runs in sample order.
inline Matrix class_means(const Matrix& v, std::span<const std::size_t> labels,
                          std::size_t num_classes) {
  if (labels.size() != v.rows())
    throw std::invalid_argument("class_means: one label per sample required");
  Matrix s(num_classes, v.cols());
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < v.rows(); ++i) {
    const std::size_t c = labels[i];
    if (c >= num_classes) throw std::invalid_argument("class_means: label out of range");
    ++counts[c];
    auto dst = s.row(c);
    const auto src = v.row(i);
    for (std::size_t j = 0; j < v.cols(); ++j) dst[j] += src[j];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0)
      throw std::invalid_argument("class_means: class " + std::to_string(c) + " has no samples");
    auto row = s.row(c);
    for (double& x : row) x /= static_cast<double>(counts[c]);
  }
  return s;
}

// Fits the reduction on training features v (m x D) with integer labels:
// class means first, then k-means over the D per-dimension signature columns.
inline MergeMap fit_merger(const Matrix& v, std::span<const std::size_t> labels, std::size_t k,
                           std::uint64_t seed) {
  const std::size_t D = v.cols();
  if (v.rows() < 1) throw std::invalid_argument("fit_merger: no samples");
  if (k < 1 || k > D) throw std::invalid_argument("fit_merger: target dimension must be in [1, D]");

  std::size_t num_classes = 0;
  for (std::size_t l : labels) num_classes = std::max(num_classes, l + 1);
  const Matrix means = class_means(v, labels, num_classes);

  // Columns of the class-mean matrix become the points to cluster.
  Matrix signatures(D, num_classes);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t c = 0; c < num_classes; ++c) signatures(i, c) = means(c, i);

  KmeansResult km = kmeans(signatures, k, seed);
  return MergeMap::from_assignments(k, std::move(km.assignments));
}

inline std::vector<double> apply_merger(const MergeMap& map, std::span<const double> h) {
  if (h.size() != map.source_dim)
    throw std::invalid_argument("apply_merger: expected vector of length " +
                                std::to_string(map.source_dim));
  std::vector<double> out(map.target_dim, 0.0);
  for (std::size_t i = 0; i < h.size(); ++i) out[map.cluster_of[i]] += h[i];
  for (std::size_t j = 0; j < map.target_dim; ++j) out[j] /= map.norms[j];
  return out;
}

// Binary format: "TPMM", u32 D, u32 k, then D u32 cluster indices. Norms are
// recomputed on load.
inline void save_merger(const std::filesystem::path& path, const MergeMap& map) {
  auto out = open_output(path);
  write_magic(out, "TPMM");
  write_u32(out, static_cast<std::uint32_t>(map.source_dim));
  write_u32(out, static_cast<std::uint32_t>(map.target_dim));
  for (std::size_t c : map.cluster_of) write_u32(out, static_cast<std::uint32_t>(c));
  if (!out) throw io_error(path, "write failed");
}

inline MergeMap load_merger(const std::filesystem::path& path) {
  auto in = open_input(path);
  expect_magic(in, "TPMM", path);
  const std::uint32_t D = read_u32(in, path);
  const std::uint32_t k = read_u32(in, path);
  std::vector<std::size_t> cluster_of(D);
  for (std::uint32_t i = 0; i < D; ++i) cluster_of[i] = read_u32(in, path);
  expect_eof(in, path);
  return MergeMap::from_assignments(k, std::move(cluster_of));
}

}  // namespace tpp

#endif  // TPP_FEATMERGE_HPP
