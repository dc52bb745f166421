#pragma once

#include <span>
#include <vector>

#include "triglab/tensor.hpp"

namespace triglab {

// All reductions accumulate in increasing index order so results are
// bit-stable across runs and thread counts.

Tensor2 matmul(const Tensor2& a, const Tensor2& b);
/// aᵀ · b
Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b);
/// a · bᵀ
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b);
/// out += aᵀ · b (gradient accumulation)
void matmul_tn_accumulate(const Tensor2& a, const Tensor2& b, Tensor2& out);

Tensor2 transpose(const Tensor2& a);

/// Row-wise softmax with max subtraction.
Tensor2 softmax_rows(const Tensor2& x);
void softmax_inplace(std::span<double> row);

/// gain_i · x_i / sqrt(mean(x²) + eps)
std::vector<double> rms_normalize(std::span<const double> x, std::span<const double> gain, double eps);

void add_inplace(Tensor2& acc, const Tensor2& x);
void add_inplace(std::span<double> acc, std::span<const double> x);
void scale_inplace(std::span<double> x, double s);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
double cosine(std::span<const double> a, std::span<const double> b);

/// Elementwise standard deviation (population) of all entries.
double elementwise_std(const Tensor2& t);

}  // namespace triglab
