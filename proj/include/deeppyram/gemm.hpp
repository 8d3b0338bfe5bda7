#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

namespace deeppyram::detail {

// Small row-major GEMM routines sized for im2col convolution work:
// M = output channels (tens), K = Cin*Kh*Kw (hundreds), N = Ho*Wo
// (thousands). Four-row blocking keeps each streamed B row reused four
// times; the contiguous N-loop vectorizes under -O3.

// C(M,N) = A(M,K) * B(K,N), overwriting C unless accumulate.
template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C,
             bool accumulate = false) {
    int64_t i = 0;
    for (; i + 4 <= M; i += 4) {
        T* __restrict c0 = C + (i + 0) * N;
        T* __restrict c1 = C + (i + 1) * N;
        T* __restrict c2 = C + (i + 2) * N;
        T* __restrict c3 = C + (i + 3) * N;
        if (!accumulate)
            for (int64_t j = 0; j < N; ++j) c0[j] = c1[j] = c2[j] = c3[j] = T(0);
        const T* a0 = A + (i + 0) * K;
        const T* a1 = A + (i + 1) * K;
        const T* a2 = A + (i + 2) * K;
        const T* a3 = A + (i + 3) * K;
        for (int64_t k = 0; k < K; ++k) {
            const T* __restrict b = B + k * N;
            const T v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            for (int64_t j = 0; j < N; ++j) {
                c0[j] += v0 * b[j];
                c1[j] += v1 * b[j];
                c2[j] += v2 * b[j];
                c3[j] += v3 * b[j];
            }
        }
    }
    for (; i < M; ++i) {
        T* __restrict c = C + i * N;
        if (!accumulate)
            for (int64_t j = 0; j < N; ++j) c[j] = T(0);
        const T* a = A + i * K;
        for (int64_t k = 0; k < K; ++k) {
            const T* __restrict b = B + k * N;
            const T v = a[k];
            for (int64_t j = 0; j < N; ++j) c[j] += v * b[j];
        }
    }
}

// C(M,N) += A(M,L) * B(N,L)^T. Dot-product form would serialize on the FP-add
// chain (strict FP forbids reduction vectorization), so B is transposed into a
// scratch and the product runs through gemm_nn's vectorizable AXPY inner loop.
template <typename T>
void gemm_nt_acc(int64_t M, int64_t N, int64_t L, const T* A, const T* B, T* C) {
    thread_local std::vector<T> scratch;
    scratch.resize(static_cast<size_t>(L * N));
    T* bt = scratch.data();
    constexpr int64_t kTile = 32;
    for (int64_t j0 = 0; j0 < N; j0 += kTile)
        for (int64_t k0 = 0; k0 < L; k0 += kTile) {
            const int64_t j1 = std::min(j0 + kTile, N);
            const int64_t k1 = std::min(k0 + kTile, L);
            for (int64_t j = j0; j < j1; ++j)
                for (int64_t k = k0; k < k1; ++k) bt[k * N + j] = B[j * L + k];
        }
    gemm_nn(M, N, L, A, bt, C, /*accumulate=*/true);
}

// C(M,N) = A(L,M)^T * B(L,N), overwriting C.
template <typename T>
void gemm_tn(int64_t M, int64_t N, int64_t L, const T* A, const T* B, T* C) {
    for (int64_t i = 0; i < M * N; ++i) C[i] = T(0);
    for (int64_t k = 0; k < L; ++k) {
        const T* __restrict b = B + k * N;
        const T* a = A + k * M;
        for (int64_t i = 0; i < M; ++i) {
            const T v = a[i];
            if (v == T(0)) continue;
            T* __restrict c = C + i * N;
            for (int64_t j = 0; j < N; ++j) c[j] += v * b[j];
        }
    }
}

} // namespace deeppyram::detail
