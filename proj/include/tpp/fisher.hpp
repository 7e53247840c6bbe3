#ifndef TPP_FISHER_HPP
#define TPP_FISHER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpp/featmerge.hpp"
#include "tpp/gmm.hpp"
#include "tpp/matrix.hpp"
#include "tpp/parallel.hpp"

namespace tpp {

// One local motion descriptor anchored at a video frame.
struct TrajectoryRecord {
  std::size_t frame_index = 0;
  std::vector<double> descriptor;
};

struct FisherVector {
  std::vector<double> values;  // 2*K*p: per component, mean block then variance block
  bool normalized = false;
};

// Frames within +/- this radius of the target frame contribute to its motion
// feature (an 11-frame window).
inline constexpr std::size_t kMotionWindowRadius = 5;

// Gradient statistics of the descriptor set under the mixture:
//   mean block      sum_t gamma_k(x_t) * (x_t - mu_k) / sigma_k      / (T * sqrt(w_k))
//   variance block  sum_t gamma_k(x_t) * (((x_t-mu_k)/sigma_k)^2 - 1) / (T * sqrt(2 w_k))
inline FisherVector fv_encode(const GmmModel& g, const Matrix& descriptors) {
  const std::size_t T = descriptors.rows();
  const std::size_t p = g.dim();
  const std::size_t K = g.components();
  if (T == 0) throw std::invalid_argument("fv_encode: empty descriptor set");
  if (descriptors.cols() != p)
    throw std::invalid_argument("fv_encode: descriptor dimension mismatch");

  FisherVector fv;
  fv.values.assign(2 * K * p, 0.0);
  std::vector<double> sigma(K * p);
  for (std::size_t c = 0; c < K; ++c)
    for (std::size_t j = 0; j < p; ++j) sigma[c * p + j] = std::sqrt(g.variances(c, j));

  for (std::size_t t = 0; t < T; ++t) {
    const auto x = descriptors.row(t);
    const std::vector<double> gamma = posteriors(g, x);
    for (std::size_t c = 0; c < K; ++c) {
      const auto mu = g.means.row(c);
      double* mean_block = fv.values.data() + c * 2 * p;
      double* var_block = mean_block + p;
      for (std::size_t j = 0; j < p; ++j) {
        const double z = (x[j] - mu[j]) / sigma[c * p + j];
        mean_block[j] += gamma[c] * z;
        var_block[j] += gamma[c] * (z * z - 1.0);
      }
    }
  }

  const double inv_t = 1.0 / static_cast<double>(T);
  for (std::size_t c = 0; c < K; ++c) {
    const double mean_scale = inv_t / std::sqrt(g.weights[c]);
    const double var_scale = inv_t / std::sqrt(2.0 * g.weights[c]);
    double* mean_block = fv.values.data() + c * 2 * p;
    double* var_block = mean_block + p;
    for (std::size_t j = 0; j < p; ++j) {
      mean_block[j] *= mean_scale;
      var_block[j] *= var_scale;
    }
  }
  return fv;
}

// Signed square root followed by global L2 normalisation; the zero vector is
// left untouched.
inline FisherVector fv_normalize(FisherVector fv) {
  double norm_sq = 0.0;
  for (double& v : fv.values) {
    v = (v < 0.0 ? -std::sqrt(-v) : std::sqrt(v));
    norm_sq += v * v;
  }
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& v : fv.values) v *= inv;
  }
  fv.normalized = true;
  return fv;
}

// Normalised Fisher vector over every descriptor whose anchor frame lies in
// [frame - 5, frame + 5]. An empty window yields the zero vector; empty_window
// reports that case when non-null.
inline FisherVector frame_motion_feature(std::span<const TrajectoryRecord> records,
                                         std::size_t frame, const GmmModel& g,
                                         bool* empty_window = nullptr) {
  const std::size_t lo = frame >= kMotionWindowRadius ? frame - kMotionWindowRadius : 0;
  const std::size_t hi = frame + kMotionWindowRadius;

  std::vector<const TrajectoryRecord*> hits;
  for (const auto& rec : records)
    if (rec.frame_index >= lo && rec.frame_index <= hi) hits.push_back(&rec);

  if (empty_window) *empty_window = hits.empty();
  if (hits.empty()) {
    FisherVector zero;
    zero.values.assign(2 * g.components() * g.dim(), 0.0);
    zero.normalized = true;
    return zero;
  }

  Matrix descriptors(hits.size(), g.dim());
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i]->descriptor.size() != g.dim())
      throw std::invalid_argument("frame_motion_feature: descriptor dimension mismatch");
    std::copy(hits[i]->descriptor.begin(), hits[i]->descriptor.end(), descriptors.row(i).begin());
  }
  return fv_normalize(fv_encode(g, descriptors));
}

// Row t is the motion feature of frame t, reduced through the merger when one
// is given. Rows are computed in parallel; each frame writes only its own row.
inline Matrix build_video_motion_features(std::span<const TrajectoryRecord> records,
                                          std::size_t n_frames, const GmmModel& g,
                                          const MergeMap* merger = nullptr,
                                          std::vector<std::size_t>* empty_frames = nullptr) {
  if (n_frames < 1) throw std::invalid_argument("build_video_motion_features: n_frames >= 1");
  const std::size_t full_dim = 2 * g.components() * g.dim();
  if (merger && merger->source_dim != full_dim)
    throw std::invalid_argument("build_video_motion_features: merger expects dimension " +
                                std::to_string(merger->source_dim) + ", encoder produces " +
                                std::to_string(full_dim));

  Matrix out(n_frames, merger ? merger->target_dim : full_dim);
  std::vector<std::uint8_t> empty(n_frames, 0);
  parallel_for(n_frames, [&](std::size_t t) {
    bool was_empty = false;
    FisherVector fv = frame_motion_feature(records, t, g, &was_empty);
    empty[t] = was_empty ? 1 : 0;
    if (merger) {
      const std::vector<double> reduced = apply_merger(*merger, fv.values);
      std::copy(reduced.begin(), reduced.end(), out.row(t).begin());
    } else {
      std::copy(fv.values.begin(), fv.values.end(), out.row(t).begin());
    }
  });
  if (empty_frames) {
    empty_frames->clear();
    for (std::size_t t = 0; t < n_frames; ++t)
      if (empty[t]) empty_frames->push_back(t);
  }
  return out;
}

// Trajectory file: plain text, header line "#dims p", then one record per
// line as "frame_index v1 ... vp".
inline std::vector<TrajectoryRecord> load_trajectories(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error(path, "cannot open for reading");

  std::string line;
  if (!std::getline(in, line)) throw io_error(path, "missing #dims header");
  std::size_t dims = 0;
  {
    std::istringstream hdr(line);
    std::string tag;
    hdr >> tag >> dims;
    if (tag != "#dims" || dims == 0) throw io_error(path, "missing #dims header");
  }

  std::vector<TrajectoryRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    TrajectoryRecord rec;
    long long frame = -1;
    if (!(ls >> frame) || frame < 0)
      throw io_error(path, "line " + std::to_string(line_no) + ": bad frame index");
    rec.frame_index = static_cast<std::size_t>(frame);
    rec.descriptor.reserve(dims);
    double v;
    while (ls >> v) rec.descriptor.push_back(v);
    if (rec.descriptor.size() != dims)
      throw io_error(path, "line " + std::to_string(line_no) + ": expected " +
                               std::to_string(dims) + " values, got " +
                               std::to_string(rec.descriptor.size()));
    records.push_back(std::move(rec));
  }
  return records;
}

inline void save_trajectories(const std::filesystem::path& path,
                              std::span<const TrajectoryRecord> records, std::size_t dims) {
  std::ofstream out(path);
  if (!out) throw io_error(path, "cannot open for writing");
  out << "#dims " << dims << "\n";
  out.precision(17);
  for (const auto& rec : records) {
    if (rec.descriptor.size() != dims)
      throw std::invalid_argument("save_trajectories: inconsistent descriptor length");
    out << rec.frame_index;
    for (double v : rec.descriptor) out << ' ' << v;
    out << "\n";
  }
  if (!out) throw io_error(path, "write failed");
}

}  // namespace tpp

#endif  // TPP_FISHER_HPP
