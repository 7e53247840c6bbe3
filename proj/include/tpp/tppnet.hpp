#ifndef TPP_TPPNET_HPP
#define TPP_TPPNET_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tpp/binio.hpp"
#include "tpp/matrix.hpp"
#include "tpp/rng.hpp"

namespace tpp {

enum class PoolOp : std::uint32_t { mean = 0, max = 1 };

inline PoolOp pool_op_from_string(const std::string& s) {
  if (s == "mean") return PoolOp::mean;
  if (s == "max") return PoolOp::max;
  throw std::invalid_argument("unknown pool op '" + s + "' (expected mean|max)");
}

inline const char* to_string(PoolOp op) { return op == PoolOp::mean ? "mean" : "max"; }

// Two-level pyramid: one segment spanning the whole video plus b even fine
// segments. b = 0 disables the fine level.
struct PyramidSpec {
  std::size_t fine_segments = 0;  // b
  PoolOp pool = PoolOp::mean;

  std::size_t block_count() const { return 1 + fine_segments; }
};

// Half-open row ranges: the coarse segment first, then the b fine segments
// (floor(i*n/b), floor((i+1)*n/b)). Fine segments partition [0, n).
inline std::vector<std::pair<std::size_t, std::size_t>> segment_bounds(std::size_t n,
                                                                       std::size_t b) {
  if (n < 1) throw std::invalid_argument("segment_bounds: need at least one frame");
  if (b > 0 && n < b)
    throw std::invalid_argument("segment_bounds: video too short (" + std::to_string(n) +
                                " frames for " + std::to_string(b) + " segments)");
  std::vector<std::pair<std::size_t, std::size_t>> bounds;
  bounds.reserve(1 + b);
  bounds.emplace_back(0, n);
  for (std::size_t i = 0; i < b; ++i) bounds.emplace_back(i * n / b, (i + 1) * n / b);
  return bounds;
}

// What backward needs to route gradients through the pooling layer: the
// segment ranges, and for max pooling the winning row per pooled element.
struct PoolTrace {
  std::vector<std::pair<std::size_t, std::size_t>> segments;
  std::vector<std::size_t> argmax;  // block_count*D entries for max pool, else empty
};

// Pools each segment of y_a (n x D) and concatenates the blocks coarse-first.
inline std::pair<std::vector<double>, PoolTrace> tpp_forward(const Matrix& y_a,
                                                             const PyramidSpec& spec) {
  const std::size_t D = y_a.cols();
  PoolTrace trace;
  trace.segments = segment_bounds(y_a.rows(), spec.fine_segments);
  std::vector<double> pooled(trace.segments.size() * D, 0.0);
  if (spec.pool == PoolOp::max) trace.argmax.assign(trace.segments.size() * D, 0);

  for (std::size_t s = 0; s < trace.segments.size(); ++s) {
    const auto [lo, hi] = trace.segments[s];
    double* block = pooled.data() + s * D;
    if (spec.pool == PoolOp::mean) {
      for (std::size_t r = lo; r < hi; ++r) {
        const auto row = y_a.row(r);
        for (std::size_t j = 0; j < D; ++j) block[j] += row[j];
      }
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t j = 0; j < D; ++j) block[j] *= inv;
    } else {
      std::size_t* winners = trace.argmax.data() + s * D;
      for (std::size_t j = 0; j < D; ++j) {
        block[j] = y_a(lo, j);
        winners[j] = lo;
      }
      for (std::size_t r = lo + 1; r < hi; ++r) {
        const auto row = y_a.row(r);
        for (std::size_t j = 0; j < D; ++j) {
          if (row[j] > block[j]) {  // strict: ties keep the lowest row index
            block[j] = row[j];
            winners[j] = r;
          }
        }
      }
    }
  }
  return {std::move(pooled), std::move(trace)};
}

struct NetParams {
  Matrix w_a;                  // d x D
  std::vector<double> b_a;     // D
  Matrix w_b;                  // (1+b)*D x c
  std::vector<double> b_b;     // c
  PyramidSpec pyramid;

  std::size_t input_dim() const { return w_a.rows(); }
  std::size_t hidden_dim() const { return w_a.cols(); }
  std::size_t num_classes() const { return w_b.cols(); }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t epochs = 25;
  std::uint64_t seed = 0;
  PyramidSpec pyramid;
  std::size_t hidden_dim = 1024;  // D, the encoded width

  void validate() const {
    if (momentum < 0.0 || momentum >= 1.0)
      throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight decay must be >= 0");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (hidden_dim < 1) throw std::invalid_argument("TrainConfig: hidden dim must be >= 1");
  }
};

struct ForwardCache {
  Matrix input;                 // n x d
  Matrix pre_activation;        // n x D, before the ReLU
  Matrix y_a;                   // n x D
  PoolTrace trace;
  std::vector<double> pooled;   // (1+b)*D
  std::vector<double> logits;   // c
  std::vector<double> probs;    // c
};

// Repeats the last feature row until the sequence is long enough for the fine
// level. Pooling-neutral for the repeated constant tail.
inline Matrix pad_to_min_rows(Matrix x, std::size_t min_rows) {
  if (x.rows() == 0) throw std::invalid_argument("pad_to_min_rows: empty sequence");
  if (x.rows() >= min_rows) return x;
  Matrix padded(min_rows, x.cols());
  for (std::size_t r = 0; r < min_rows; ++r) {
    const auto src = x.row(std::min(r, x.rows() - 1));
    std::copy(src.begin(), src.end(), padded.row(r).begin());
  }
  return padded;
}

inline std::pair<std::vector<double>, ForwardCache> forward(const Matrix& x,
                                                            const NetParams& params) {
  if (x.cols() != params.input_dim())
    throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) +
                                " columns, net expects " + std::to_string(params.input_dim()));
  ForwardCache cache;
  cache.input = x;
  cache.pre_activation = affine(x, params.w_a, params.b_a);
  cache.y_a = relu(cache.pre_activation);
  auto [pooled, trace] = tpp_forward(cache.y_a, params.pyramid);
  cache.pooled = std::move(pooled);
  cache.trace = std::move(trace);
  if (cache.pooled.size() != params.w_b.rows())
    throw std::invalid_argument("forward: pooled width does not match classifier");

  cache.logits.assign(params.num_classes(), 0.0);
  for (std::size_t i = 0; i < cache.pooled.size(); ++i) {
    const auto wrow = params.w_b.row(i);
    for (std::size_t j = 0; j < cache.logits.size(); ++j)
      cache.logits[j] += cache.pooled[i] * wrow[j];
  }
  for (std::size_t j = 0; j < cache.logits.size(); ++j) cache.logits[j] += params.b_b[j];
  cache.probs = softmax(cache.logits);
  return {cache.probs, std::move(cache)};
}

inline std::vector<double> predict(const NetParams& params, const Matrix& x) {
  return forward(pad_to_min_rows(x, std::max<std::size_t>(1, params.pyramid.fine_segments)),
                 params)
      .first;
}

// Negative log-likelihood of the labelled class, probability clamped at 1e-12.
inline double loss(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) throw std::invalid_argument("loss: label out of range");
  return -std::log(std::max(probs[label], 1e-12));
}

struct Gradients {
  Matrix w_a;
  std::vector<double> b_a;
  Matrix w_b;
  std::vector<double> b_b;

  static Gradients zeros_like(const NetParams& p) {
    return {Matrix(p.w_a.rows(), p.w_a.cols()), std::vector<double>(p.b_a.size(), 0.0),
            Matrix(p.w_b.rows(), p.w_b.cols()), std::vector<double>(p.b_b.size(), 0.0)};
  }
};

using Velocity = Gradients;

// Exact gradients of the instance loss. Softmax/NLL delta at the logits, then
// through the classifier, the pooling trace (mean spreads 1/len over the
// segment rows, max routes to the winning row), the ReLU mask, and FCa.
inline Gradients backward(const ForwardCache& cache, const NetParams& params,
                          std::size_t label) {
  const std::size_t c = params.num_classes();
  const std::size_t D = params.hidden_dim();
  if (label >= c) throw std::invalid_argument("backward: label out of range");

  Gradients grads = Gradients::zeros_like(params);

  std::vector<double> dlogits(cache.probs);
  dlogits[label] -= 1.0;

  for (std::size_t i = 0; i < cache.pooled.size(); ++i) {
    auto wrow = grads.w_b.row(i);
    for (std::size_t j = 0; j < c; ++j) wrow[j] += cache.pooled[i] * dlogits[j];
  }
  grads.b_b = dlogits;

  std::vector<double> dpooled(cache.pooled.size(), 0.0);
  for (std::size_t i = 0; i < dpooled.size(); ++i) {
    const auto wrow = params.w_b.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += wrow[j] * dlogits[j];
    dpooled[i] = acc;
  }

  Matrix dy_a(cache.y_a.rows(), D);
  for (std::size_t s = 0; s < cache.trace.segments.size(); ++s) {
    const auto [lo, hi] = cache.trace.segments[s];
    const double* block = dpooled.data() + s * D;
    if (params.pyramid.pool == PoolOp::mean) {
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t r = lo; r < hi; ++r) {
        auto row = dy_a.row(r);
        for (std::size_t j = 0; j < D; ++j) row[j] += block[j] * inv;
      }
    } else {
      const std::size_t* winners = cache.trace.argmax.data() + s * D;
      for (std::size_t j = 0; j < D; ++j) dy_a(winners[j], j) += block[j];
    }
  }

  // ReLU mask, then accumulate FCa gradients over frames.
  for (std::size_t r = 0; r < dy_a.rows(); ++r) {
    auto drow = dy_a.row(r);
    const auto pre = cache.pre_activation.row(r);
    for (std::size_t j = 0; j < D; ++j)
      if (pre[j] <= 0.0) drow[j] = 0.0;
  }
  for (std::size_t r = 0; r < cache.input.rows(); ++r) {
    const auto xrow = cache.input.row(r);
    const auto drow = dy_a.row(r);
    for (std::size_t i = 0; i < params.input_dim(); ++i) {
      auto wrow = grads.w_a.row(i);
      for (std::size_t j = 0; j < D; ++j) wrow[j] += xrow[i] * drow[j];
    }
    for (std::size_t j = 0; j < D; ++j) grads.b_a[j] += drow[j];
  }
  return grads;
}

namespace detail {

inline void sgd_update(Matrix& param, const Matrix& grad, Matrix& velocity,
                       const TrainConfig& cfg, double weight_decay) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    double& v = velocity.data()[i];
    v = cfg.momentum * v -
        cfg.learning_rate * (grad.data()[i] + weight_decay * param.data()[i]);
    param.data()[i] += v;
  }
}

inline void sgd_update(std::vector<double>& param, const std::vector<double>& grad,
                       std::vector<double>& velocity, const TrainConfig& cfg,
                       double weight_decay) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    double& v = velocity[i];
    v = cfg.momentum * v - cfg.learning_rate * (grad[i] + weight_decay * param[i]);
    param[i] += v;
  }
}

}  // namespace detail

// v <- momentum*v - lr*(grad + wd*param); param <- param + v. Weight decay
// applies to the weight matrices only.
inline void sgd_step(NetParams& params, const Gradients& grads, Velocity& velocity,
                     const TrainConfig& cfg) {
  detail::sgd_update(params.w_a, grads.w_a, velocity.w_a, cfg, cfg.weight_decay);
  detail::sgd_update(params.b_a, grads.b_a, velocity.b_a, cfg, 0.0);
  detail::sgd_update(params.w_b, grads.w_b, velocity.w_b, cfg, cfg.weight_decay);
  detail::sgd_update(params.b_b, grads.b_b, velocity.b_b, cfg, 0.0);
}

// Zero biases, Gaussian weights with std sqrt(2 / fan_in).
inline NetParams init_params(std::size_t input_dim, std::size_t num_classes,
                             const TrainConfig& cfg) {
  cfg.validate();
  NetParams params;
  params.pyramid = cfg.pyramid;
  const std::size_t D = cfg.hidden_dim;
  const std::size_t pooled_dim = cfg.pyramid.block_count() * D;
  params.w_a = Matrix(input_dim, D);
  params.b_a.assign(D, 0.0);
  params.w_b = Matrix(pooled_dim, num_classes);
  params.b_b.assign(num_classes, 0.0);

  Rng rng(Rng::derive(cfg.seed, 0));
  const double std_a = std::sqrt(2.0 / static_cast<double>(input_dim));
  for (double& v : params.w_a.data()) v = std_a * rng.next_gaussian();
  const double std_b = std::sqrt(2.0 / static_cast<double>(pooled_dim));
  for (double& v : params.w_b.data()) v = std_b * rng.next_gaussian();
  return params;
}

struct LabeledSequence {
  Matrix features;  // n x d
  std::size_t label = 0;
};

struct TrainResult {
  NetParams params;
  std::vector<double> epoch_losses;  // mean instance loss per epoch
};

// Instance-level SGD: each epoch is one seeded shuffle followed by one
// parameter update per video. Deterministic given the config seed.
inline TrainResult train(std::span<const LabeledSequence> dataset, std::size_t num_classes,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const std::size_t input_dim = dataset.front().features.cols();
  std::vector<std::size_t> seen(num_classes, 0);
  for (const auto& sample : dataset) {
    if (sample.features.cols() != input_dim)
      throw std::invalid_argument("train: inconsistent feature dimensions");
    if (sample.label >= num_classes) throw std::invalid_argument("train: label out of range");
    ++seen[sample.label];
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (seen[c] == 0)
      throw std::invalid_argument("train: class " + std::to_string(c) + " has no samples");

  // Short videos are padded up front so every epoch sees the same features.
  const std::size_t min_rows = std::max<std::size_t>(1, cfg.pyramid.fine_segments);
  std::vector<Matrix> padded;
  padded.reserve(dataset.size());
  for (const auto& sample : dataset) padded.push_back(pad_to_min_rows(sample.features, min_rows));

  TrainResult result;
  result.params = init_params(input_dim, num_classes, cfg);
  Velocity velocity = Gradients::zeros_like(result.params);

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(Rng::derive(cfg.seed, 1 + epoch));
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      auto [probs, cache] = forward(padded[idx], result.params);
      epoch_loss += loss(probs, dataset[idx].label);
      const Gradients grads = backward(cache, result.params, dataset[idx].label);
      sgd_step(result.params, grads, velocity, cfg);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(dataset.size()));
  }
  return result;
}

// Binary format: "TPNP", u32 d, D, b, c, pool op code, then W_a, B_a, W_b,
// B_b as little-endian f64.
inline void save_net(const std::filesystem::path& path, const NetParams& params) {
  auto out = open_output(path);
  write_magic(out, "TPNP");
  write_u32(out, static_cast<std::uint32_t>(params.input_dim()));
  write_u32(out, static_cast<std::uint32_t>(params.hidden_dim()));
  write_u32(out, static_cast<std::uint32_t>(params.pyramid.fine_segments));
  write_u32(out, static_cast<std::uint32_t>(params.num_classes()));
  write_u32(out, static_cast<std::uint32_t>(params.pyramid.pool));
  write_f64(out, params.w_a.data());
  write_f64(out, params.b_a);
  write_f64(out, params.w_b.data());
  write_f64(out, params.b_b);
  if (!out) throw io_error(path, "write failed");
}

inline NetParams load_net(const std::filesystem::path& path) {
  auto in = open_input(path);
  expect_magic(in, "TPNP", path);
  const std::uint32_t d = read_u32(in, path);
  const std::uint32_t D = read_u32(in, path);
  const std::uint32_t b = read_u32(in, path);
  const std::uint32_t c = read_u32(in, path);
  const std::uint32_t pool_code = read_u32(in, path);
  if (pool_code > 1) throw io_error(path, "bad pool op code");

  NetParams params;
  params.pyramid.fine_segments = b;
  params.pyramid.pool = static_cast<PoolOp>(pool_code);
  params.w_a = Matrix(d, D);
  params.b_a.assign(D, 0.0);
  params.w_b = Matrix((1 + static_cast<std::size_t>(b)) * D, c);
  params.b_b.assign(c, 0.0);
  read_f64(in, params.w_a.data(), path);
  read_f64(in, params.b_a, path);
  read_f64(in, params.w_b.data(), path);
  read_f64(in, params.b_b, path);
  expect_eof(in, path);
  if (!params.w_a.all_finite() || !params.w_b.all_finite())
    throw io_error(path, "non-finite parameters");
  return params;
}

}  // namespace tpp

#endif  // TPP_TPPNET_HPP
