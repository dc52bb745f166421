#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace triglab {

/// Dense row-major matrix of doubles. The shape is fixed at construction.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2 identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor2& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Tensor2& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Dense (depth, rows, cols) stack of matrices, e.g. per-head attention maps.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t depth, std::size_t rows, std::size_t cols, double fill = 0.0);

  std::size_t depth() const { return depth_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t d, std::size_t r, std::size_t c) {
    return data_[(d * rows_ + r) * cols_ + c];
  }
  double operator()(std::size_t d, std::size_t r, std::size_t c) const {
    return data_[(d * rows_ + r) * cols_ + c];
  }

  std::span<double> slice_row(std::size_t d, std::size_t r) {
    return {data_.data() + (d * rows_ + r) * cols_, cols_};
  }
  std::span<const double> slice_row(std::size_t d, std::size_t r) const {
    return {data_.data() + (d * rows_ + r) * cols_, cols_};
  }

  Tensor2 slice(std::size_t d) const;
  void set_slice(std::size_t d, const Tensor2& m);

  bool operator==(const Tensor3& o) const = default;

 private:
  std::size_t depth_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace triglab
