#pragma once

#include <random>
#include <string>
#include <utility>

#include "hcft/ops.hpp"

namespace hcft {

// Train: batch statistics, running-stat updates, stochastic dropout.
// GradCheck: batch statistics but no state mutation and no dropout, so
// repeated forwards of the same input are identical (finite differences
// need a pure function).
// Eval: frozen statistics, dropout off.
enum class Mode { Train, GradCheck, Eval };

enum class Pad { Valid, Same };

// A raw attention map lifted out of a forward pass: softmax weights of
// shape (B, H, P_query, P_key), detached from the graph.
template <typename T>
struct AttnCapture {
  std::string tag;
  Shape shape;
  std::vector<T> weights;
};

template <typename T>
struct FwdCtx {
  Mode mode = Mode::Eval;
  std::mt19937_64* rng = nullptr;                   // train-mode dropout draws
  std::vector<AttnCapture<T>>* attn_sink = nullptr; // when set, attention records maps
  std::string attn_tag;                             // label for the next capture
};

// Handles to a module's tensors, both trainable parameters and persistent
// buffers (running statistics); optimizers keep the requires_grad subset.
template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

// Grouped 1D cross-correlation over (B, C, L). Weight layout
// (Cout, Cin/groups, k). Same padding splits the deficit left/right
// (extra sample on the right).
template <typename T>
struct Conv1d {
  std::size_t in_ch = 0, out_ch = 0, kernel = 1, stride = 1, groups = 1;
  Pad pad = Pad::Valid;
  Tensor<T> w, b; // b undefined when constructed without bias

  Conv1d() = default;
  Conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
         Pad pad, std::size_t groups, bool bias, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  void named_tensors(NamedTensors<T>& out, const std::string& prefix);
};

// Grouped 2D cross-correlation over (B, C, H, W) with per-axis padding.
template <typename T>
struct Conv2d {
  std::size_t in_ch = 0, out_ch = 0, kh = 1, kw = 1, sh = 1, sw = 1, groups = 1;
  Pad pad_h = Pad::Valid, pad_w = Pad::Valid;
  Tensor<T> w, b;

  Conv2d() = default;
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kh, std::size_t kw,
         std::size_t sh, std::size_t sw, Pad pad_h, Pad pad_w, std::size_t groups,
         bool bias, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  void named_tensors(NamedTensors<T>& out, const std::string& prefix);
};

// Mean over sliding windows of the last axis, valid padding:
// L' = floor((L - k) / s) + 1. KernelTooLarge when k > L.
template <typename T>
Tensor<T> avg_pool_last(const Tensor<T>& x, std::size_t k, std::size_t s);

// Normalizes over every axis except axis 1 (the channel axis).
template <typename T>
struct BatchNorm {
  std::size_t channels = 0;
  T momentum = T(0.1), eps = T(1e-5);
  Tensor<T> gamma, beta;              // trainable affine
  Tensor<T> running_mean, running_var; // buffers, updated in Train mode only

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  void named_tensors(NamedTensors<T>& out, const std::string& prefix);
};

// Standardize the last axis, then scale/shift by gamma/beta (shape (D)).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Train mode zeroes each value with probability `rate` and scales survivors
// by 1/(1-rate); other modes return the input unchanged.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, const FwdCtx<T>& ctx);

// Scaled-dot-product attention, H heads, no biases or masking. Queries come
// from q_src, keys/values from kv_src; self-attention passes the same
// tensor for both.
template <typename T>
struct MultiHeadAttention {
  std::size_t dim = 0, heads = 1;
  Tensor<T> wq, wk, wv, wo; // all (D, D)

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& q_src, const Tensor<T>& kv_src,
                    const FwdCtx<T>& ctx) const;
  void named_tensors(NamedTensors<T>& out, const std::string& prefix);
};

// y = x W + b over the last axis; W is (Din, Dout).
template <typename T>
struct Linear {
  Tensor<T> w, b;

  Linear() = default;
  Linear(std::size_t in_dim, std::size_t out_dim, bool bias, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  void named_tensors(NamedTensors<T>& out, const std::string& prefix);
};

// x (B, P, D) plus the first P rows of a trainable table (Pmax, D), or a
// single-column table (Pmax, 1) broadcast across the feature axis.
// SequenceTooLong when P exceeds the table.
template <typename T>
Tensor<T> positional_encoding_add(const Tensor<T>& x, const Tensor<T>& table);

} // namespace hcft
