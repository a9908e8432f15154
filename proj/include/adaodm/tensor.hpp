#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaodm {

/// Dense row-major tensor of 64-bit floats. Rank is dynamic but in practice
/// everything in this library is a scalar, a vector, or a B x F matrix.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw std::invalid_argument("Tensor: data length " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape));
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  /// 2-D construction from nested braces: Tensor::from_rows({{1,2},{3,4}}).
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Tensor t({r, c});
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw std::invalid_argument("Tensor::from_rows: ragged rows");
      for (double v : row) t.data_[i++] = v;
    }
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  /// Rows/cols of a 2-D tensor; a 1-D tensor is treated as a single row.
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const {
    return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : numel());
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool is_scalar() const { return numel() == 1; }

  void fill(double v) {
    for (auto& x : data_) x = v;
  }

  std::string shape_string() const { return shape_str(shape_); }

  static std::string shape_str(const std::vector<std::size_t>& s) {
    if (s.empty()) return "[]";
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_string() + " vs " + b.shape_string());
  }
}

namespace detail {

// C[B x O] = A[B x I] * W[I x O]
inline void matmul(const Tensor& a, const Tensor& w, Tensor& out) {
  const std::size_t b = a.rows(), in = a.cols(), o = w.cols();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < in; ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < o; ++j) out(i, j) += aik * w(k, j);
    }
  }
}

// C[B x I] += G[B x O] * W^T
inline void matmul_bt(const Tensor& g, const Tensor& w, Tensor& out) {
  const std::size_t b = g.rows(), o = g.cols(), in = w.rows();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < o; ++j) {
      const double gij = g(i, j);
      for (std::size_t k = 0; k < in; ++k) out(i, k) += gij * w(k, j);
    }
  }
}

// C[I x O] += A^T * G
inline void matmul_at(const Tensor& a, const Tensor& g, Tensor& out) {
  const std::size_t b = a.rows(), in = a.cols(), o = g.cols();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < in; ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < o; ++j) out(k, j) += aik * g(i, j);
    }
  }
}

}  // namespace detail

}  // namespace adaodm
