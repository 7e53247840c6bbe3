#ifndef TPP_GMM_HPP
#define TPP_GMM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "tpp/binio.hpp"
#include "tpp/matrix.hpp"
#include "tpp/rng.hpp"

namespace tpp {

struct KmeansResult {
  Matrix centroids;                     // k x p
  std::vector<std::size_t> assignments; // one entry per point, in [0, k)
  double inertia = 0.0;                 // sum of squared distances to assigned centroid
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

// k-means++ seeding. When all remaining mass is zero (duplicate points) the
// lowest-index point not already chosen is used, so k distinct rows are
// preferred whenever they exist.
inline std::vector<std::size_t> kmeanspp_seeds(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t m = points.rows();
  std::vector<std::size_t> seeds;
  seeds.reserve(k);
  std::vector<bool> chosen(m, false);
  std::vector<double> min_d2(m, std::numeric_limits<double>::infinity());

  std::size_t first = static_cast<std::size_t>(rng.next_below(m));
  seeds.push_back(first);
  chosen[first] = true;

  while (seeds.size() < k) {
    const auto last = points.row(seeds.back());
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      min_d2[i] = std::min(min_d2[i], sq_dist(points.row(i), last));
      if (!chosen[i]) total += min_d2[i];
    }
    std::size_t next = m;
    if (total > 0.0) {
      const double target = rng.next_double() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        if (chosen[i]) continue;
        acc += min_d2[i];
        if (acc >= target) {
          next = i;
          break;
        }
      }
      if (next == m) {  // numeric tail; take the last unchosen candidate
        for (std::size_t i = m; i-- > 0;)
          if (!chosen[i]) {
            next = i;
            break;
          }
      }
    } else {
      for (std::size_t i = 0; i < m; ++i)
        if (!chosen[i]) {
          next = i;
          break;
        }
    }
    seeds.push_back(next);
    chosen[next] = true;
  }
  return seeds;
}

}  // namespace detail

// Lloyd's algorithm from k-means++ seeding. Ties in the assignment step go to
// the lowest centroid index. Empty clusters are repaired by moving the point
// farthest from its current centroid (lowest index on ties), skipping points
// that are alone in their cluster. inertia_trace, when given, receives the
// inertia after every iteration.
inline KmeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                           std::size_t max_iters = 100,
                           std::vector<double>* inertia_trace = nullptr) {
  const std::size_t m = points.rows();
  const std::size_t p = points.cols();
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (m < k)
    throw std::invalid_argument("kmeans: need at least k points (" + std::to_string(m) +
                                " < " + std::to_string(k) + ")");

  Rng rng(seed);
  const auto seeds = detail::kmeanspp_seeds(points, k, rng);
  Matrix centroids(k, p);
  for (std::size_t c = 0; c < k; ++c) {
    const auto src = points.row(seeds[c]);
    std::copy(src.begin(), src.end(), centroids.row(c).begin());
  }

  std::vector<std::size_t> assign(m, 0);
  std::vector<std::size_t> counts(k, 0);
  std::vector<double> dist(m, 0.0);
  double inertia = 0.0;

  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    bool changed = (iter == 0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_c = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = detail::sq_dist(points.row(i), centroids.row(c));
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      if (assign[i] != best_c) {
        assign[i] = best_c;
        changed = true;
      }
      dist[i] = best;
      ++counts[best_c];
    }

    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      double far = -1.0;
      std::size_t victim = m;
      for (std::size_t i = 0; i < m; ++i) {
        if (counts[assign[i]] <= 1) continue;
        if (dist[i] > far) {
          far = dist[i];
          victim = i;
        }
      }
      if (victim == m) throw std::logic_error("kmeans: cannot repair empty cluster");
      --counts[assign[victim]];
      assign[victim] = c;
      counts[c] = 1;
      dist[victim] = 0.0;
      changed = true;
    }

    centroids = Matrix(k, p);
    for (std::size_t i = 0; i < m; ++i) {
      auto dst = centroids.row(assign[i]);
      const auto src = points.row(i);
      for (std::size_t j = 0; j < p; ++j) dst[j] += src[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      auto row = centroids.row(c);
      for (double& v : row) v /= static_cast<double>(counts[c]);
    }

    inertia = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      inertia += detail::sq_dist(points.row(i), centroids.row(assign[i]));
    if (inertia_trace) inertia_trace->push_back(inertia);

    if (!changed) break;
  }

  return {std::move(centroids), std::move(assign), inertia};
}

// Diagonal-covariance Gaussian mixture.
struct GmmModel {
  std::vector<double> weights;  // K, sum to 1
  Matrix means;                 // K x p
  Matrix variances;             // K x p, floored at kVarianceFloor

  std::size_t components() const { return weights.size(); }
  std::size_t dim() const { return means.cols(); }
};

inline constexpr double kVarianceFloor = 1e-6;

namespace detail {

// log N(x; mu_k, diag var_k) for every component, written into out[K].
inline void component_log_densities(const GmmModel& g, std::span<const double> x,
                                    std::span<double> out) {
  constexpr double kLog2Pi = 1.8378770664093454835606594728112353;
  const std::size_t p = g.dim();
  for (std::size_t c = 0; c < g.components(); ++c) {
    const auto mu = g.means.row(c);
    const auto var = g.variances.row(c);
    double acc = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double d = x[j] - mu[j];
      acc += kLog2Pi + std::log(var[j]) + d * d / var[j];
    }
    out[c] = -0.5 * acc;
  }
}

inline double log_sum_exp(std::span<const double> v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace detail

// Posterior responsibilities gamma_k(x), computed in log space.
inline std::vector<double> posteriors(const GmmModel& g, std::span<const double> x) {
  const std::size_t K = g.components();
  std::vector<double> lg(K);
  detail::component_log_densities(g, x, lg);
  for (std::size_t c = 0; c < K; ++c) lg[c] += std::log(g.weights[c]);
  const double lse = detail::log_sum_exp(lg);
  for (double& v : lg) v = std::exp(v - lse);
  return lg;
}

// Mean per-point log density under the mixture.
inline double log_likelihood(const GmmModel& g, const Matrix& points) {
  if (points.rows() == 0) throw std::invalid_argument("log_likelihood: no points");
  std::vector<double> lg(g.components());
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    detail::component_log_densities(g, points.row(i), lg);
    for (std::size_t c = 0; c < g.components(); ++c) lg[c] += std::log(g.weights[c]);
    total += detail::log_sum_exp(lg);
  }
  return total / static_cast<double>(points.rows());
}

// EM fit initialised from k-means. Stops when the mean log-likelihood improves
// by less than tol or after max_iters. If ll_trace is given it receives the
// mean log-likelihood evaluated at the start of every EM iteration.
inline GmmModel fit_gmm(const Matrix& points, std::size_t K, std::uint64_t seed,
                        std::size_t max_iters = 100, double tol = 1e-6,
                        std::vector<double>* ll_trace = nullptr) {
  const std::size_t m = points.rows();
  const std::size_t p = points.cols();
  if (p < 1) throw std::invalid_argument("fit_gmm: dimension must be >= 1");
  if (m < K) throw std::invalid_argument("fit_gmm: need at least K points");

  const KmeansResult km = kmeans(points, K, seed);
  GmmModel g;
  g.weights.assign(K, 0.0);
  g.means = km.centroids;
  g.variances = Matrix(K, p);
  std::vector<std::size_t> counts(K, 0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t c = km.assignments[i];
    ++counts[c];
    const auto x = points.row(i);
    const auto mu = g.means.row(c);
    auto var = g.variances.row(c);
    for (std::size_t j = 0; j < p; ++j) {
      const double d = x[j] - mu[j];
      var[j] += d * d;
    }
  }
  for (std::size_t c = 0; c < K; ++c) {
    g.weights[c] = static_cast<double>(counts[c]) / static_cast<double>(m);
    auto var = g.variances.row(c);
    for (double& v : var) v = std::max(v / static_cast<double>(counts[c]), kVarianceFloor);
  }

  Matrix resp(m, K);
  std::vector<double> lg(K);
  double prev_ll = -std::numeric_limits<double>::infinity();

  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    // E-step; the per-point log-sum-exp doubles as the likelihood monitor.
    double ll = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      detail::component_log_densities(g, points.row(i), lg);
      for (std::size_t c = 0; c < K; ++c) lg[c] += std::log(g.weights[c]);
      const double lse = detail::log_sum_exp(lg);
      ll += lse;
      auto r = resp.row(i);
      for (std::size_t c = 0; c < K; ++c) r[c] = std::exp(lg[c] - lse);
    }
    ll /= static_cast<double>(m);
    if (ll_trace) ll_trace->push_back(ll);
    if (ll - prev_ll < tol && iter > 0) break;
    prev_ll = ll;

    // M-step. Responsibility mass is floored so a component whose mass
    // underflows keeps finite parameters and a positive weight.
    std::vector<double> nk(K, 0.0);
    Matrix mean_acc(K, p);
    for (std::size_t i = 0; i < m; ++i) {
      const auto r = resp.row(i);
      const auto x = points.row(i);
      for (std::size_t c = 0; c < K; ++c) {
        nk[c] += r[c];
        auto acc = mean_acc.row(c);
        for (std::size_t j = 0; j < p; ++j) acc[j] += r[c] * x[j];
      }
    }
    for (std::size_t c = 0; c < K; ++c) {
      nk[c] = std::max(nk[c], static_cast<double>(m) * 1e-10);
      auto mu = mean_acc.row(c);
      for (double& v : mu) v /= nk[c];
    }
    Matrix var_acc(K, p);
    for (std::size_t i = 0; i < m; ++i) {
      const auto r = resp.row(i);
      const auto x = points.row(i);
      for (std::size_t c = 0; c < K; ++c) {
        const auto mu = mean_acc.row(c);
        auto acc = var_acc.row(c);
        for (std::size_t j = 0; j < p; ++j) {
          const double d = x[j] - mu[j];
          acc[j] += r[c] * d * d;
        }
      }
    }
    double weight_total = 0.0;
    for (std::size_t c = 0; c < K; ++c) {
      g.weights[c] = nk[c] / static_cast<double>(m);
      weight_total += g.weights[c];
      auto var = var_acc.row(c);
      for (double& v : var) v = std::max(v / nk[c], kVarianceFloor);
    }
    for (double& w : g.weights) w /= weight_total;
    g.means = std::move(mean_acc);
    g.variances = std::move(var_acc);
  }
  return g;
}

// Binary format: "TPGM", u32 K, u32 p, then weights, means, variances as
// little-endian f64 (matrices row-major).
inline void save_gmm(const std::filesystem::path& path, const GmmModel& g) {
  auto out = open_output(path);
  write_magic(out, "TPGM");
  write_u32(out, static_cast<std::uint32_t>(g.components()));
  write_u32(out, static_cast<std::uint32_t>(g.dim()));
  write_f64(out, g.weights);
  write_f64(out, g.means.data());
  write_f64(out, g.variances.data());
  if (!out) throw io_error(path, "write failed");
}

inline GmmModel load_gmm(const std::filesystem::path& path) {
  auto in = open_input(path);
  expect_magic(in, "TPGM", path);
  const std::uint32_t K = read_u32(in, path);
  const std::uint32_t p = read_u32(in, path);
  GmmModel g;
  g.weights.assign(K, 0.0);
  g.means = Matrix(K, p);
  g.variances = Matrix(K, p);
  read_f64(in, g.weights, path);
  read_f64(in, g.means.data(), path);
  read_f64(in, g.variances.data(), path);
  expect_eof(in, path);
  return g;
}

}  // namespace tpp

#endif  // TPP_GMM_HPP
