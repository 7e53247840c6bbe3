#ifndef TPP_MATRIX_HPP
#define TPP_MATRIX_HPP

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tpp {

// Dense row-major matrix of doubles. All library arithmetic runs in 64-bit
// precision; reductions accumulate left to right so results are reproducible
// bit for bit across runs.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != m.cols_)
        throw std::invalid_argument("Matrix::from_rows: ragged initializer");
      std::size_t c = 0;
      for (double v : row) m(r, c++) = v;
      ++r;
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void check_shape(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

// C = A * B with the inner index accumulated in ascending order for every
// output element.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  check_shape(a.cols() == b.rows(),
              "matmul: inner dimensions mismatch (" + std::to_string(a.cols()) +
                  " vs " + std::to_string(b.rows()) + ")");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t l = 0; l < a.cols(); ++l) {
      const double ail = a(i, l);
      const auto brow = b.row(l);
      for (std::size_t j = 0; j < b.cols(); ++j) out[j] += ail * brow[j];
    }
  }
  return c;
}

// X*W + bias, bias broadcast across rows.
inline Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> bias) {
  check_shape(bias.size() == w.cols(), "affine: bias length must equal output width");
  Matrix y = matmul(x, w);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto row = y.row(i);
    for (std::size_t j = 0; j < y.cols(); ++j) row[j] += bias[j];
  }
  return y;
}

inline Matrix relu(Matrix x) {
  for (double& v : x.data())
    if (v < 0.0) v = 0.0;
  return x;
}

// Row-wise exp-normalisation with max subtraction.
inline Matrix softmax_rows(Matrix x) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  return x;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  Matrix m(1, logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) m(0, j) = logits[j];
  m = softmax_rows(std::move(m));
  return m.data();
}

}  // namespace tpp

#endif  // TPP_MATRIX_HPP
