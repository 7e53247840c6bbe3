#ifndef TPP_FUSION_HPP
#define TPP_FUSION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpp/binio.hpp"
#include "tpp/matrix.hpp"
#include "tpp/rng.hpp"
#include "tpp/tppnet.hpp"

namespace tpp {

// Row-wise concatenation of the two modalities, appearance block first.
inline Matrix early_fuse(const Matrix& appearance, const Matrix& motion) {
  if (appearance.rows() != motion.rows())
    throw std::invalid_argument("early_fuse: modalities must share the frame count (" +
                                std::to_string(appearance.rows()) + " vs " +
                                std::to_string(motion.rows()) + ")");
  Matrix fused(appearance.rows(), appearance.cols() + motion.cols());
  for (std::size_t r = 0; r < fused.rows(); ++r) {
    auto dst = fused.row(r);
    const auto a = appearance.row(r);
    std::copy(a.begin(), a.end(), dst.begin());
    const auto m = motion.row(r);
    std::copy(m.begin(), m.end(), dst.begin() + appearance.cols());
  }
  return fused;
}

struct FusionWeights {
  double appearance = 1.0 / 3.0;  // motion weight is the complement

  explicit FusionWeights(double appearance_weight = 1.0 / 3.0) : appearance(appearance_weight) {
    if (!(appearance >= 0.0 && appearance <= 1.0))
      throw std::invalid_argument("FusionWeights: appearance weight must be in [0, 1]");
  }
  double motion() const { return 1.0 - appearance; }
};

// Weighted average of the two class distributions.
inline std::vector<double> late_fuse(std::span<const double> p_appearance,
                                     std::span<const double> p_motion, FusionWeights w) {
  if (p_appearance.size() != p_motion.size())
    throw std::invalid_argument("late_fuse: distributions must have equal length");
  std::vector<double> out(p_appearance.size());
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = w.appearance * p_appearance[j] + w.motion() * p_motion[j];
  return out;
}

inline std::vector<double> score_fuse_avg(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("score_fuse_avg: distributions must have equal length");
  std::vector<double> out(a.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = 0.5 * (a[j] + b[j]);
  return out;
}

// One-vs-rest linear SVM.
struct SvmModel {
  Matrix weights;               // d x c
  std::vector<double> biases;   // c
  double lambda = 0.0;

  std::size_t input_dim() const { return weights.rows(); }
  std::size_t num_classes() const { return weights.cols(); }
};

inline std::vector<double> svm_margins(const SvmModel& model, std::span<const double> feature) {
  if (feature.size() != model.input_dim())
    throw std::invalid_argument("svm_margins: feature dimension mismatch");
  std::vector<double> margins(model.biases);
  for (std::size_t i = 0; i < feature.size(); ++i) {
    const auto wrow = model.weights.row(i);
    for (std::size_t j = 0; j < margins.size(); ++j) margins[j] += feature[i] * wrow[j];
  }
  return margins;
}

// Decision values calibrated to a distribution with a softmax over the
// one-vs-rest margins; the argmax matches the raw margins.
inline std::vector<double> svm_scores(const SvmModel& model, std::span<const double> feature) {
  return softmax(svm_margins(model, feature));
}

// Subgradient SGD on lambda/2*|w|^2 + mean hinge, one binary problem per
// class, step size 1/(lambda*t). The counter starts at ceil(1/lambda) so the
// first step is bounded, each step projects onto the |w| <= 1/sqrt(lambda)
// ball, and bias updates are scaled down and unregularised.
inline constexpr double kSvmBiasScale = 0.01;

inline SvmModel train_linear_svm(const Matrix& features, std::span<const std::size_t> labels,
                                 std::size_t num_classes, double lambda, std::size_t epochs,
                                 std::uint64_t seed) {
  const std::size_t m = features.rows();
  const std::size_t d = features.cols();
  if (labels.size() != m) throw std::invalid_argument("train_linear_svm: one label per row");
  if (num_classes < 2) throw std::invalid_argument("train_linear_svm: need at least two classes");
  if (lambda <= 0.0) throw std::invalid_argument("train_linear_svm: lambda must be positive");
  for (std::size_t l : labels)
    if (l >= num_classes) throw std::invalid_argument("train_linear_svm: label out of range");

  SvmModel model;
  model.weights = Matrix(d, num_classes);
  model.biases.assign(num_classes, 0.0);
  model.lambda = lambda;

  const double radius = 1.0 / std::sqrt(lambda);
  const std::size_t warm_start = static_cast<std::size_t>(std::ceil(1.0 / lambda));
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;

  for (std::size_t cls = 0; cls < num_classes; ++cls) {
    std::vector<double> w(d, 0.0);
    double bias = 0.0;
    std::size_t t = warm_start;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      Rng rng(Rng::derive(seed, cls * epochs + epoch));
      rng.shuffle(order);
      for (std::size_t idx : order) {
        ++t;
        const double lr = 1.0 / (lambda * static_cast<double>(t));
        const double y = labels[idx] == cls ? 1.0 : -1.0;
        const auto x = features.row(idx);
        double margin = bias;
        for (std::size_t i = 0; i < d; ++i) margin += w[i] * x[i];
        const double shrink = 1.0 - lr * lambda;
        double norm_sq = 0.0;
        if (y * margin < 1.0) {
          for (std::size_t i = 0; i < d; ++i) {
            w[i] = shrink * w[i] + lr * y * x[i];
            norm_sq += w[i] * w[i];
          }
          bias += kSvmBiasScale * lr * y;
        } else {
          for (std::size_t i = 0; i < d; ++i) {
            w[i] *= shrink;
            norm_sq += w[i] * w[i];
          }
        }
        if (norm_sq > radius * radius) {
          const double scale = radius / std::sqrt(norm_sq);
          for (double& v : w) v *= scale;
        }
      }
    }
    for (std::size_t i = 0; i < d; ++i) model.weights(i, cls) = w[i];
    model.biases[cls] = bias;
  }
  return model;
}

// Video-level pooled-feature baseline. Average pooling is the degenerate
// b = 0 mean pyramid, so both modes share tpp_forward bit for bit.
inline std::vector<double> pool_baseline(const Matrix& features,
                                         const std::optional<PyramidSpec>& pyramid) {
  const PyramidSpec spec = pyramid.value_or(PyramidSpec{0, PoolOp::mean});
  const Matrix padded =
      pad_to_min_rows(features, std::max<std::size_t>(1, spec.fine_segments));
  return tpp_forward(padded, spec).first;
}

// Binary format: "TPSV", u32 d, u32 c, then weights (row-major) and biases as
// little-endian f64.
inline void save_svm(const std::filesystem::path& path, const SvmModel& model) {
  auto out = open_output(path);
  write_magic(out, "TPSV");
  write_u32(out, static_cast<std::uint32_t>(model.input_dim()));
  write_u32(out, static_cast<std::uint32_t>(model.num_classes()));
  write_f64(out, model.weights.data());
  write_f64(out, model.biases);
  if (!out) throw io_error(path, "write failed");
}

inline SvmModel load_svm(const std::filesystem::path& path) {
  auto in = open_input(path);
  expect_magic(in, "TPSV", path);
  const std::uint32_t d = read_u32(in, path);
  const std::uint32_t c = read_u32(in, path);
  SvmModel model;
  model.weights = Matrix(d, c);
  model.biases.assign(c, 0.0);
  read_f64(in, model.weights.data(), path);
  read_f64(in, model.biases, path);
  expect_eof(in, path);
  return model;
}

}  // namespace tpp

#endif  // TPP_FUSION_HPP
