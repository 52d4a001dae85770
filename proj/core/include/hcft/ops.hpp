#pragma once

#include "hcft/tensor.hpp"

namespace hcft {

// Differentiable primitives. Elementwise binaries support two broadcast
// forms only: identical shapes, or one operand whose shape is a trailing
// suffix of the other's (a single-element tensor counts as a suffix).
// Anything else raises ShapeMismatch.

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
// Exact Gaussian-CDF GELU: x * Phi(x).
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

// C[i,j] = sum_t A[i,t] B[t,j]. Rank-2 by rank-2, or batched with equal
// leading dims, or batched A against a rank-2 B (B applied per batch).
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Max-subtracted softmax over the last axis; every slice sums to 1.
template <typename T> Tensor<T> softmax_lastdim(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// (..., X, Y) -> (..., Y, X)
template <typename T> Tensor<T> transpose_last2(const Tensor<T>& x);
// (A, X, Y, rest...) -> (A, Y, X, rest...); rank >= 3
template <typename T> Tensor<T> swap_axes12(const Tensor<T>& x);
// Concatenate rank-3 tensors (B, P_i, D) along the middle axis.
template <typename T> Tensor<T> concat_axis1(const std::vector<Tensor<T>>& parts);

namespace detail {
// Assembles a graph node: output requires_grad iff any input does; the
// backward closure is dropped entirely on grad-free paths.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value,
                  std::vector<std::shared_ptr<Node<T>>> inputs,
                  std::function<void(Node<T>&)> backward_fn);
} // namespace detail

} // namespace hcft
