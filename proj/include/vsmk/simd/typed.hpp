#pragma once

#include <type_traits>

#include "vsmk/simd/kernels.hpp"

// Thin typed shims routing float work to the active kernel table and double
// work to the (always scalar) double entries.

namespace vsmk::simd {

template <typename T>
inline void k_add(const T* a, const T* b, T* y, size_t n) {
    if constexpr (std::is_same_v<T, float>) kernels().vadd_f32(a, b, y, n);
    else kernels().vadd_f64(a, b, y, n);
}

template <typename T>
inline void k_sub(const T* a, const T* b, T* y, size_t n) {
    if constexpr (std::is_same_v<T, float>) kernels().vsub_f32(a, b, y, n);
    else kernels().vsub_f64(a, b, y, n);
}

template <typename T>
inline void k_mul(const T* a, const T* b, T* y, size_t n) {
    if constexpr (std::is_same_v<T, float>) kernels().vmul_f32(a, b, y, n);
    else kernels().vmul_f64(a, b, y, n);
}

template <typename T>
inline void k_scale(const T* a, T s, T* y, size_t n) {
    if constexpr (std::is_same_v<T, float>) kernels().vscale_f32(a, s, y, n);
    else kernels().vscale_f64(a, s, y, n);
}

template <typename T>
inline void k_axpy(T s, const T* x, T* y, size_t n) {
    if constexpr (std::is_same_v<T, float>) kernels().vaxpy_f32(s, x, y, n);
    else kernels().vaxpy_f64(s, x, y, n);
}

template <typename T>
inline void k_fma(const T* a, const T* b, T* y, size_t n) {
    if constexpr (std::is_same_v<T, float>) kernels().vfma_f32(a, b, y, n);
    else kernels().vfma_f64(a, b, y, n);
}

template <typename T>
inline void k_relu(const T* x, T* y, size_t n) {
    if constexpr (std::is_same_v<T, float>) kernels().vrelu_f32(x, y, n);
    else kernels().vrelu_f64(x, y, n);
}

template <typename T>
inline void k_relu_bwd(const T* x, const T* dy, T* dx, size_t n) {
    if constexpr (std::is_same_v<T, float>) kernels().vrelu_bwd_f32(x, dy, dx, n);
    else kernels().vrelu_bwd_f64(x, dy, dx, n);
}

template <typename T>
inline T k_dot(const T* a, const T* b, size_t n) {
    if constexpr (std::is_same_v<T, float>) return kernels().vdot_f32(a, b, n);
    else return kernels().vdot_f64(a, b, n);
}

template <typename T>
inline T k_sum(const T* x, size_t n) {
    if constexpr (std::is_same_v<T, float>) return kernels().vsum_f32(x, n);
    else return kernels().vsum_f64(x, n);
}

template <typename T>
inline void k_gemm(size_t m, size_t n, size_t k, const T* a, const T* b, T* c,
                   bool accumulate) {
    if constexpr (std::is_same_v<T, float>) kernels().gemm_f32(m, n, k, a, b, c, accumulate);
    else kernels().gemm_f64(m, n, k, a, b, c, accumulate);
}

template <typename T>
inline void k_adamw(T* p, const T* g, T* m, T* v, size_t n, T lr, T b1, T b2, T eps, T wd,
                    T bc1, T bc2) {
    if constexpr (std::is_same_v<T, float>)
        kernels().adamw_f32(p, g, m, v, n, lr, b1, b2, eps, wd, bc1, bc2);
    else
        kernels().adamw_f64(p, g, m, v, n, lr, b1, b2, eps, wd, bc1, bc2);
}

template <typename T>
inline void k_s6_fwd(size_t L, size_t d, size_t N, const T* a, const T* delta, const T* Bm,
                     const T* Cm, const T* x, T* h, T* y) {
    if constexpr (std::is_same_v<T, float>)
        kernels().s6_fwd_f32(L, d, N, a, delta, Bm, Cm, x, h, y);
    else
        kernels().s6_fwd_f64(L, d, N, a, delta, Bm, Cm, x, h, y);
}

template <typename T>
inline void k_s6_bwd(size_t L, size_t d, size_t N, const T* a, const T* delta, const T* Bm,
                     const T* Cm, const T* x, const T* h, const T* dy, T* da, T* ddelta,
                     T* dB, T* dC, T* dx) {
    if constexpr (std::is_same_v<T, float>)
        kernels().s6_bwd_f32(L, d, N, a, delta, Bm, Cm, x, h, dy, da, ddelta, dB, dC, dx);
    else
        kernels().s6_bwd_f64(L, d, N, a, delta, Bm, Cm, x, h, dy, da, ddelta, dB, dC, dx);
}

}  // namespace vsmk::simd
