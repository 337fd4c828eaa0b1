#include "kernels.hpp"

#include <algorithm>
#include <vector>

namespace cat::tensor::kernels {

void gemm_nn(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* B,
             double* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, 0.0);
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    double* c0 = C + i * N;
    double* c1 = c0 + N;
    double* c2 = c1 + N;
    double* c3 = c2 + N;
    const double* a0 = A + i * K;
    const double* a1 = a0 + K;
    const double* a2 = a1 + K;
    const double* a3 = a2 + K;
    for (std::size_t k = 0; k < K; ++k) {
      const double* b = B + k * N;
      const double x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
      for (std::size_t j = 0; j < N; ++j) {
        const double bj = b[j];
        c0[j] += x0 * bj;
        c1[j] += x1 * bj;
        c2[j] += x2 * bj;
        c3[j] += x3 * bj;
      }
    }
  }
  for (; i < M; ++i) {
    double* c = C + i * N;
    const double* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double* b = B + k * N;
      const double x = a[k];
      for (std::size_t j = 0; j < N; ++j) c[j] += x * b[j];
    }
  }
}

void gemm_tn_acc(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* D,
                 double* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    const double* d = D + i * N;
    std::size_t k = 0;
    for (; k + 4 <= K; k += 4) {
      double* c0 = C + k * N;
      double* c1 = c0 + N;
      double* c2 = c1 + N;
      double* c3 = c2 + N;
      const double x0 = a[k], x1 = a[k + 1], x2 = a[k + 2], x3 = a[k + 3];
      for (std::size_t j = 0; j < N; ++j) {
        const double dj = d[j];
        c0[j] += x0 * dj;
        c1[j] += x1 * dj;
        c2[j] += x2 * dj;
        c3[j] += x3 * dj;
      }
    }
    for (; k < K; ++k) {
      double* c = C + k * N;
      const double x = a[k];
      for (std::size_t j = 0; j < N; ++j) c[j] += x * d[j];
    }
  }
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* D, const double* B,
             double* C, bool accumulate) {
  std::vector<double> bt(N * K);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < N; ++j) bt[j * K + k] = B[k * N + j];
  gemm_nn(M, N, K, D, bt.data(), C, accumulate);
}

}  // namespace cat::tensor::kernels
