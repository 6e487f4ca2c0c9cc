#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace stackpool::detail {

// C[M x N] += A[M x K] * B[K x N], all row-major with explicit leading
// dimensions.  B is packed into NR-wide column panels; a MR x NR tile of C
// lives in registers across the whole k loop.  Every C element accumulates
// over k in increasing order, so results do not depend on the tiling.
template <typename T>
struct GemmTile {
    static constexpr std::size_t MR = 6;
    static constexpr std::size_t NR = 16;
};

template <typename T, std::size_t MR>
inline void gemm_micro(std::size_t K, const T* A, std::size_t lda, const T* panel, T* C, std::size_t ldc,
                       std::size_t nb) {
    constexpr std::size_t NR = GemmTile<T>::NR;
    constexpr std::size_t W = 32 / sizeof(T);  // lanes per 256-bit vector
    constexpr std::size_t NV = NR / W;
    typedef T vec __attribute__((vector_size(32), aligned(sizeof(T))));
    vec acc[MR][NV] = {};
    for (std::size_t k = 0; k < K; ++k) {
        const T* b = panel + k * NR;
        vec bv[NV];
#pragma GCC unroll 8
        for (std::size_t v = 0; v < NV; ++v) bv[v] = *reinterpret_cast<const vec*>(b + v * W);
#pragma GCC unroll 8
        for (std::size_t r = 0; r < MR; ++r) {
            const T a = A[r * lda + k];
#pragma GCC unroll 8
            for (std::size_t v = 0; v < NV; ++v) acc[r][v] += a * bv[v];
        }
    }
#pragma GCC unroll 8
    for (std::size_t r = 0; r < MR; ++r) {
        T tmp[NR];
#pragma GCC unroll 8
        for (std::size_t v = 0; v < NV; ++v) {
            const vec t = acc[r][v];
            __builtin_memcpy(tmp + v * W, &t, sizeof(vec));
        }
        for (std::size_t j = 0; j < nb; ++j) C[r * ldc + j] += tmp[j];
    }
}

template <typename T>
void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
              std::size_t ldb, T* C, std::size_t ldc) {
    constexpr std::size_t MR = GemmTile<T>::MR, NR = GemmTile<T>::NR;
    thread_local std::vector<T> panel;
    panel.resize(K * NR);
    for (std::size_t j0 = 0; j0 < N; j0 += NR) {
        const std::size_t nb = std::min(NR, N - j0);
        for (std::size_t k = 0; k < K; ++k) {
            const T* src = B + k * ldb + j0;
            T* dst = panel.data() + k * NR;
            std::size_t j = 0;
            for (; j < nb; ++j) dst[j] = src[j];
            for (; j < NR; ++j) dst[j] = T{0};
        }
        std::size_t i = 0;
        for (; i + MR <= M; i += MR) gemm_micro<T, MR>(K, A + i * lda, lda, panel.data(), C + i * ldc + j0, ldc, nb);
        for (; i < M; ++i) gemm_micro<T, 1>(K, A + i * lda, lda, panel.data(), C + i * ldc + j0, ldc, nb);
    }
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
    constexpr std::size_t TB = 32;
    for (std::size_t r0 = 0; r0 < rows; r0 += TB)
        for (std::size_t c0 = 0; c0 < cols; c0 += TB)
            for (std::size_t r = r0; r < std::min(rows, r0 + TB); ++r)
                for (std::size_t c = c0; c < std::min(cols, c0 + TB); ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace stackpool::detail
