#include "triglab/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "triglab/error.hpp"

namespace triglab {

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor2 c(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c.row(i).data();
    const double* arow = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b.row(p).data();
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
  require(a.rows() == b.rows(), "matmul_tn: row counts differ");
  Tensor2 c(a.cols(), b.cols());
  matmul_tn_accumulate(a, b, c);
  return c;
}

void matmul_tn_accumulate(const Tensor2& a, const Tensor2& b, Tensor2& out) {
  require(a.rows() == b.rows(), "matmul_tn: row counts differ");
  require(out.rows() == a.cols() && out.cols() == b.cols(), "matmul_tn: output shape mismatch");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t r = 0; r < n; ++r) {
    const double* arow = a.row(r).data();
    const double* brow = b.row(r).data();
    for (std::size_t i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = out.row(i).data();
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
  require(a.cols() == b.cols(), "matmul_nt: column counts differ");
  const std::size_t n = a.rows(), m = b.rows(), k = a.cols();
  Tensor2 c(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.row(i).data();
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b.row(j).data();
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c(i, j) = s;
    }
  }
  return c;
}

Tensor2 transpose(const Tensor2& a) {
  Tensor2 t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

void softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  const double mx = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (auto& v : row) {
    v = std::exp(v - mx);
    total += v;
  }
  for (auto& v : row) v /= total;
}

Tensor2 softmax_rows(const Tensor2& x) {
  Tensor2 out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) softmax_inplace(out.row(i));
  return out;
}

std::vector<double> rms_normalize(std::span<const double> x, std::span<const double> gain, double eps) {
  require(x.size() == gain.size(), "rms_normalize: length mismatch");
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + eps);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gain[i] * x[i] * inv;
  if (ss == 0.0 && eps == 0.0) std::fill(out.begin(), out.end(), 0.0);
  return out;
}

void add_inplace(Tensor2& acc, const Tensor2& x) {
  require(acc.same_shape(x), "add_inplace: shape mismatch");
  add_inplace(acc.flat(), x.flat());
}

void add_inplace(std::span<double> acc, std::span<const double> x) {
  require(acc.size() == x.size(), "add_inplace: length mismatch");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

void scale_inplace(std::span<double> x, double s) {
  for (auto& v : x) v *= s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a), nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

double elementwise_std(const Tensor2& t) {
  if (t.size() == 0) return 0.0;
  double mean = 0.0;
  for (double v : t.flat()) mean += v;
  mean /= static_cast<double>(t.size());
  double var = 0.0;
  for (double v : t.flat()) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(t.size()));
}

}  // namespace triglab
