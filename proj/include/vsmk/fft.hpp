#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "vsmk/errors.hpp"

// Iterative radix-2 complex FFT plus the real convolution/correlation helpers
// built on it. Twiddles are computed in double regardless of T.

namespace vsmk::fft {

inline size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

template <typename T>
void fft_inplace(std::vector<std::complex<T>>& a, bool inverse) {
    const size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0)
        throw ShapeError("fft length must be a power of two, got " + std::to_string(n));

    // Bit-reversal permutation.
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }

    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * 3.14159265358979323846 / double(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                const std::complex<T> u = a[i + j];
                const std::complex<T> t(
                    T(w.real()) * a[i + j + len / 2].real() - T(w.imag()) * a[i + j + len / 2].imag(),
                    T(w.real()) * a[i + j + len / 2].imag() + T(w.imag()) * a[i + j + len / 2].real());
                a[i + j] = u + t;
                a[i + j + len / 2] = u - t;
                w *= wl;
            }
        }
    }
    if (inverse) {
        const T inv = T(1) / T(n);
        for (auto& x : a) x *= inv;
    }
}

// Linear convolution of real sequences a (length la) and b (length lb),
// truncated (or zero-extended) to lout: out[t] = sum_{i+j==t} a[i] b[j].
// Strides allow column access into row-major [L, C] matrices.
template <typename T>
void convolve(const T* a, size_t la, size_t sa, const T* b, size_t lb, size_t sb, T* out,
              size_t lout, size_t sout) {
    const size_t need = la + lb >= 1 ? la + lb - 1 : 1;
    const size_t n = next_pow2(need);
    std::vector<std::complex<T>> fa(n), fb(n);
    for (size_t i = 0; i < la; ++i) fa[i] = a[i * sa];
    for (size_t i = 0; i < lb; ++i) fb[i] = b[i * sb];
    fft_inplace(fa, false);
    fft_inplace(fb, false);
    for (size_t i = 0; i < n; ++i) fa[i] *= fb[i];
    fft_inplace(fa, true);
    for (size_t t = 0; t < lout; ++t) out[t * sout] = t < need ? fa[t].real() : T(0);
}

// Cross-correlation at non-negative lags: out[i] = sum_t a[t] b[t - i].
// Requires lb <= la contexts where indices stay valid; entries of b outside its
// range act as zero. Used by the convolution backward pass.
template <typename T>
void correlate(const T* a, size_t la, size_t sa, const T* b, size_t lb, size_t sb, T* out,
               size_t lout, size_t sout) {
    const size_t need = la + lb >= 1 ? la + lb - 1 : 1;
    const size_t n = next_pow2(need);
    std::vector<std::complex<T>> fa(n), fb(n);
    for (size_t i = 0; i < la; ++i) fa[i] = a[i * sa];
    for (size_t i = 0; i < lb; ++i) fb[i] = b[i * sb];
    fft_inplace(fa, false);
    fft_inplace(fb, false);
    for (size_t i = 0; i < n; ++i) fa[i] *= std::conj(fb[i]);
    fft_inplace(fa, true);
    for (size_t t = 0; t < lout; ++t) out[t * sout] = fa[t].real();
}

}  // namespace vsmk::fft
