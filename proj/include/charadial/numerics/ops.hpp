#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "charadial/numerics/tensor.hpp"

namespace charadial::numerics {

// Matrix-shaped ops treat a tensor as rows() x cols() (last axis = columns).

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a * b^T without materialising the transpose.
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
/// Adds a length-cols() vector to every row.
template <typename T> Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row);
/// x * W + b for x (R, in), W (in, out), b (out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T> Tensor<T> silu(const Tensor<T>& x);
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);

/// Max-subtracted softmax along `axis`; throws NumericError on non-finite input.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
/// Row softmax of a square score matrix where entry (i, j) with j > i is
/// excluded (probability exactly 0).
template <typename T> Tensor<T> causal_softmax(const Tensor<T>& scores);

/// Scaled dot-product attention split into `heads` column groups:
/// q (Tq, d), k and v (Tk, d) -> (Tq, d). Causal masking needs Tq == Tk.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::size_t heads, bool causal);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T epsilon = T(1e-5));

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> indices);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count);
/// Column-wise mean over rows: (R, C) -> (1, C).
template <typename T> Tensor<T> mean_rows(const Tensor<T>& x);
/// Column-wise max; ties go to the first row.
template <typename T> Tensor<T> max_rows(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b);

/// -log softmax(logits)[target] for a single row of logits.
template <typename T> Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t target);
/// Sum over rows of per-row cross-entropy.
template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, std::span<const std::size_t> targets);
/// Binary cross-entropy of a single logit against label 0 or 1.
template <typename T> Tensor<T> bce_with_logits(const Tensor<T>& logit, T label);

/// Inverted dropout. Identity when rate == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, T rate, std::mt19937_64& rng);

}  // namespace charadial::numerics
