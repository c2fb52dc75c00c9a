// SPDX-License-Identifier: Apache-2.0
//
// Differentiable ops over Tensor. Matrices are row-major; a rank-1 tensor is
// treated as a single row wherever a matrix is expected.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mome/autodiff/tensor.hpp"

namespace mome::ad {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x[n×d] + bias[d] on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
// x times a scalar tensor; differentiable in both.
Tensor scale_by(const Tensor& x, const Tensor& factor);
Tensor add_n(std::span<const Tensor> terms);

Tensor relu(const Tensor& x);
Tensor softmax_lastdim(const Tensor& x);
Tensor log_softmax_lastdim(const Tensor& x);

inline constexpr double kLayerNormEps = 1e-6;
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps);

// [L×d] -> [d]
Tensor mean_pool_rows(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Zero when either vector is zero, with zero gradient.
Tensor cosine_sim(const Tensor& a, const Tensor& b);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

// Row lookup: out[i] = table[ids[i]].
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
// out[i] = x[i, cols[i]] for a [n×V] matrix; result has shape [n].
Tensor pick(const Tensor& x, std::span<const int> cols);
// Single flat element as a scalar.
Tensor element(const Tensor& x, std::size_t flat_index);

}  // namespace mome::ad
