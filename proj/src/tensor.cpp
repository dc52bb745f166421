#include "triglab/tensor.hpp"

#include <algorithm>

#include "triglab/error.hpp"

namespace triglab {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows * cols, "Tensor2: data size does not match shape");
}

Tensor2 Tensor2::identity(std::size_t n) {
  Tensor2 t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor3::Tensor3(std::size_t depth, std::size_t rows, std::size_t cols, double fill)
    : depth_(depth), rows_(rows), cols_(cols), data_(depth * rows * cols, fill) {}

Tensor2 Tensor3::slice(std::size_t d) const {
  require(d < depth_, "Tensor3::slice: depth index out of range");
  Tensor2 out(rows_, cols_);
  auto begin = data_.begin() + static_cast<std::ptrdiff_t>(d * rows_ * cols_);
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(rows_ * cols_), out.flat().begin());
  return out;
}

void Tensor3::set_slice(std::size_t d, const Tensor2& m) {
  require(d < depth_ && m.rows() == rows_ && m.cols() == cols_, "Tensor3::set_slice: shape mismatch");
  std::copy(m.flat().begin(), m.flat().end(),
            data_.begin() + static_cast<std::ptrdiff_t>(d * rows_ * cols_));
}

}  // namespace triglab
