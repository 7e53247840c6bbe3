#ifndef TPP_TESTS_TESTUTIL_HPP
#define TPP_TESTS_TESTUTIL_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tpp/matrix.hpp"
#include "tpp/rng.hpp"
#include "tpp/tppnet.hpp"

namespace testutil {

// Scratch directory under the test working directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::path("tmp_" + tag + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline tpp::Matrix random_matrix(std::size_t rows, std::size_t cols, tpp::Rng& rng,
                                 double scale = 1.0) {
  tpp::Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.next_gaussian();
  return m;
}

inline tpp::NetParams random_net(std::size_t d, std::size_t D, std::size_t b, std::size_t c,
                                 tpp::PoolOp pool, std::uint64_t seed) {
  tpp::TrainConfig cfg;
  cfg.hidden_dim = D;
  cfg.pyramid = tpp::PyramidSpec{b, pool};
  cfg.seed = seed;
  return tpp::init_params(d, c, cfg);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline bool file_bytes_equal(const std::filesystem::path& a, const std::filesystem::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string da((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string db((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return fa && fb && da == db;
}

}  // namespace testutil

#endif  // TPP_TESTS_TESTUTIL_HPP
