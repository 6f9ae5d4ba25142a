#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cade {

// Dense row-major matrix of doubles. A single feature vector is a 1xK tensor,
// a bag of instances is an NxK tensor.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);
  // Nested-list literal, e.g. Tensor2{{1, 2}, {3, 4}}.
  Tensor2(std::initializer_list<std::initializer_list<double>> rows);

  static Tensor2 row(std::span<const double> values);
  static Tensor2 column(std::span<const double> values);
  static Tensor2 scalar(double v) { return Tensor2(1, 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  std::span<double> row_span(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols_, cols_);
  }
  const std::vector<double>& values() const { return data_; }

  // Only scalar (1x1) tensors.
  double item() const;

  bool all_finite() const;
  bool same_shape(const Tensor2& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Stacks tensors with equal column counts on top of each other.
Tensor2 vstack(std::span<const Tensor2> parts);

// Throws NumericError naming `where` if any entry is NaN or infinite.
void require_finite(const Tensor2& t, const char* where);

}  // namespace cade
