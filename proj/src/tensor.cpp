#include "cade/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "cade/error.hpp"

namespace cade {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("Tensor2: data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
  }
}

Tensor2::Tensor2(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Tensor2: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Tensor2 Tensor2::row(std::span<const double> values) {
  return Tensor2(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Tensor2 Tensor2::column(std::span<const double> values) {
  return Tensor2(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

double Tensor2::item() const {
  if (rows_ != 1 || cols_ != 1) {
    throw DimensionError("Tensor2::item on non-scalar " + shape_string());
  }
  return data_[0];
}

bool Tensor2::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor2::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

Tensor2 vstack(std::span<const Tensor2> parts) {
  if (parts.empty()) return {};
  std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols && !p.empty()) {
      throw DimensionError("vstack: column mismatch " + p.shape_string());
    }
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor2(rows, cols, std::move(data));
}

void require_finite(const Tensor2& t, const char* where) {
  if (!t.all_finite()) {
    throw NumericError(std::string(where) + ": non-finite value in tensor " + t.shape_string());
  }
}

}  // namespace cade
