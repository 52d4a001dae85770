#pragma once

#include <cstddef>
#include <vector>

#include "hcft/threading.hpp"

namespace hcft::detail {

// Small accumulating matrix kernels shared by the tensor ops and the conv
// lowering.  All three kernels add into C (callers zero it when needed) and
// partition work by rows of C, so within a row the summation order is fixed
// by the blocking below, not by the schedule; results are identical for any
// thread count.

// C(m,n) += A(m,k) * B(k,n), all row-major.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  parallel_for(m, [=](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const T* arow = a + i * k;
      T* crow = c + i * n;
      std::size_t t = 0;
      for (; t + 4 <= k; t += 4) {
        const T a0 = arow[t], a1 = arow[t + 1], a2 = arow[t + 2], a3 = arow[t + 3];
        const T* b0 = b + t * n;
        const T* b1 = b0 + n;
        const T* b2 = b1 + n;
        const T* b3 = b2 + n;
        for (std::size_t j = 0; j < n; ++j) {
          crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
      }
      for (; t < k; ++t) {
        const T av = arow[t];
        if (av == T(0)) continue;
        const T* brow = b + t * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// C(m,k) += A(m,n) * B(k,n)^T, all row-major.  B is packed into its
// transpose first so the inner loops stream contiguously exactly like
// gemm_acc; the pack is O(n*k) against O(m*n*k) multiplies.
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  std::vector<T> bt(n * k);
  for (std::size_t t = 0; t < k; ++t) {
    const T* brow = b + t * n;
    for (std::size_t j = 0; j < n; ++j) bt[j * k + t] = brow[j];
  }
  const T* d = bt.data();
  parallel_for(m, [=](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const T* arow = a + i * n;
      T* crow = c + i * k;
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        const T a0 = arow[j], a1 = arow[j + 1], a2 = arow[j + 2], a3 = arow[j + 3];
        const T* d0 = d + j * k;
        const T* d1 = d0 + k;
        const T* d2 = d1 + k;
        const T* d3 = d2 + k;
        for (std::size_t t = 0; t < k; ++t) {
          crow[t] += a0 * d0[t] + a1 * d1[t] + a2 * d2[t] + a3 * d3[t];
        }
      }
      for (; j < n; ++j) {
        const T av = arow[j];
        if (av == T(0)) continue;
        const T* drow = d + j * k;
        for (std::size_t t = 0; t < k; ++t) crow[t] += av * drow[t];
      }
    }
  });
}

// C(k,n) += A(m,k)^T * B(m,n), all row-major.  Work is split by rows of C
// (columns of A); four A rows are folded per pass so the strided column
// reads amortize over full-width row updates.
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  parallel_for(k, [=](std::size_t lo, std::size_t hi) {
    for (std::size_t t = lo; t < hi; ++t) {
      T* crow = c + t * n;
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) {
        const T v0 = a[i * k + t];
        const T v1 = a[(i + 1) * k + t];
        const T v2 = a[(i + 2) * k + t];
        const T v3 = a[(i + 3) * k + t];
        const T* b0 = b + i * n;
        const T* b1 = b0 + n;
        const T* b2 = b1 + n;
        const T* b3 = b2 + n;
        for (std::size_t j = 0; j < n; ++j) {
          crow[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
        }
      }
      for (; i < m; ++i) {
        const T av = a[i * k + t];
        if (av == T(0)) continue;
        const T* brow = b + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

}  // namespace hcft::detail
