#pragma once
// Row-major GEMM kernels. Every output element is accumulated over the inner
// index in ascending order starting from zero (or from the existing value when
// accumulating), so results match a plain triple loop bit-for-bit when FP
// contraction is disabled.

#include <algorithm>
#include <cstddef>
#include <vector>

namespace lensformer::kernels {

inline constexpr std::size_t kColumnBlock = 256;

/// c[m,n] (+)= a[m,k] * b[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      const T* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = b + p * n;
        for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

/// c[m,n] (+)= a^T * b with a stored as [k,m]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
    for (std::size_t p = 0; p < k; ++p) {
      const T* arow = a + p * m;
      const T* brow = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = arow[i];
        T* crow = c + i * n;
        for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile)
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile)
      for (std::size_t r = r0; r < std::min(rows, r0 + kTile); ++r)
        for (std::size_t cc = c0; cc < std::min(cols, c0 + kTile); ++cc) dst[cc * rows + r] = src[r * cols + cc];
}

/// c[m,n] (+)= a[m,k] * b^T with b stored as [n,k]
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  thread_local std::vector<T> scratch;
  scratch.resize(k * n);
  transpose(n, k, b, scratch.data());
  gemm_nn(m, n, k, a, scratch.data(), c, accumulate);
}

}  // namespace lensformer::kernels
