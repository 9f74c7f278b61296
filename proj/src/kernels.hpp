#pragma once

#include <cstddef>

// Small dense kernels. Loops are ordered so the innermost one is contiguous
// and vectorizable; each output element is summed in a fixed order.

namespace eqd::kernels {

// C[M,N] (+)= A[M,K] * B[K,N]
template <class T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
  for (int i = 0; i < M; ++i) {
    T* c = C + static_cast<std::size_t>(i) * N;
    if (!accumulate) {
#pragma omp simd
      for (int j = 0; j < N; ++j) c[j] = T(0);
    }
    const T* a = A + static_cast<std::size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const T av = a[k];
      if (av == T(0)) continue;
      const T* b = B + static_cast<std::size_t>(k) * N;
#pragma omp simd
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<std::size_t>(i) * K;
    T* c = C + static_cast<std::size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const T* b = B + static_cast<std::size_t>(j) * K;
      T s = T(0);
#pragma omp simd reduction(+ : s)
      for (int k = 0; k < K; ++k) s += a[k] * b[k];
      c[j] = accumulate ? c[j] + s : s;
    }
  }
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(M) * N; ++i) C[i] = T(0);
  }
  for (int k = 0; k < K; ++k) {
    const T* a = A + static_cast<std::size_t>(k) * M;
    const T* b = B + static_cast<std::size_t>(k) * N;
    for (int i = 0; i < M; ++i) {
      const T av = a[i];
      if (av == T(0)) continue;
      T* c = C + static_cast<std::size_t>(i) * N;
#pragma omp simd
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace eqd::kernels
