#pragma once

#include <cstddef>

namespace cat::tensor::kernels {

// Row-major dense products. Every output element is accumulated over the
// contraction index in ascending order with separately rounded multiply and
// add, so its value never depends on which row or block it sits in.

// C[M,N] (+)= A[M,K] * B[K,N]
void gemm_nn(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* B,
             double* C, bool accumulate);
// C[K,N] += A[M,K]^T * D[M,N]
void gemm_tn_acc(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* D,
                 double* C);
// C[M,K] (+)= D[M,N] * B[K,N]^T
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* D, const double* B,
             double* C, bool accumulate);

}  // namespace cat::tensor::kernels
