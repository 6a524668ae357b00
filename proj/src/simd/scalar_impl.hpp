#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vsmk/zoh.hpp"

// ===== Scalar reference kernels =====
// Plain loops, templated over float/double. These define the semantics the
// vectorized variants are tested against.

namespace vsmk::simd::scalar {

template <typename T>
void vadd(const T* a, const T* b, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <typename T>
void vsub(const T* a, const T* b, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

template <typename T>
void vmul(const T* a, const T* b, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <typename T>
void vscale(const T* a, T s, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = s * a[i];
}

template <typename T>
void vaxpy(T s, const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += s * x[i];
}

template <typename T>
void vfma(const T* a, const T* b, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

template <typename T>
void vrelu(const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void vrelu_bwd(const T* x, const T* dy, T* dx, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (x[i] > T(0)) dx[i] += dy[i];
}

template <typename T>
T vdot(const T* a, const T* b, size_t n) {
    T acc = 0;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
T vsum(const T* x, size_t n) {
    T acc = 0;
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

// C[m,n] (+)= A[m,k] * B[k,n]. The k-outer/j-inner order matches the order the
// AVX2 kernel accumulates in, so per-element rounding differs only by FMA.
template <typename T>
void gemm(size_t m, size_t n, size_t k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) {
        for (size_t i = 0; i < m * n; ++i) c[i] = T(0);
    }
    for (size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (size_t t = 0; t < k; ++t) {
            const T aik = arow[t];
            const T* brow = b + t * n;
            for (size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// Moment updates and bias-corrected adaptive step, then decoupled decay applied
// to the post-step parameter. bc1/bc2 are the precomputed 1/(1-beta^t) factors.
template <typename T>
void adamw(T* p, const T* g, T* m, T* v, size_t n, T lr, T beta1, T beta2, T eps, T wd,
           T bc1, T bc2) {
    const T decay = T(1) - lr * wd;
    for (size_t i = 0; i < n; ++i) {
        const T gi = g[i];
        m[i] = beta1 * m[i] + (T(1) - beta1) * gi;
        v[i] = beta2 * v[i] + (T(1) - beta2) * gi * gi;
        const T mhat = m[i] * bc1;
        const T vhat = v[i] * bc2;
        p[i] = (p[i] - lr * mhat / (std::sqrt(vhat) + eps)) * decay;
    }
}

template <typename T>
void s6_fwd(size_t L, size_t d, size_t N, const T* a, const T* delta, const T* Bm,
            const T* Cm, const T* x, T* h, T* y) {
    for (size_t t = 0; t < L; ++t) {
        const T* Bt = Bm + t * N;
        const T* Ct = Cm + t * N;
        for (size_t c = 0; c < d; ++c) {
            const T dt = delta[t * d + c];
            const T xt = x[t * d + c];
            const T* hprev = t > 0 ? h + ((t - 1) * d + c) * N : nullptr;
            T* ht = h + (t * d + c) * N;
            T acc = 0;
            for (size_t i = 0; i < N; ++i) {
                const T u = dt * a[i];
                const T abar = std::exp(u);
                const T bbar = zoh_factor_from_exp(u, abar) * dt * Bt[i];
                const T hp = hprev ? hprev[i] : T(0);
                const T hn = abar * hp + bbar * xt;
                ht[i] = hn;
                acc += Ct[i] * hn;
            }
            y[t * d + c] = acc;
        }
    }
}

template <typename T>
void s6_bwd(size_t L, size_t d, size_t N, const T* a, const T* delta, const T* Bm,
            const T* Cm, const T* x, const T* h, const T* dy, T* da, T* ddelta, T* dB,
            T* dC, T* dx) {
    // g[c,i] = dL/dh[t,c,i], carried backwards through the recurrence.
    std::vector<T> g(d * N, T(0));
    for (size_t t = L; t-- > 0;) {
        const T* Bt = Bm + t * N;
        const T* Ct = Cm + t * N;
        T* dBt = dB + t * N;
        T* dCt = dC + t * N;
        for (size_t c = 0; c < d; ++c) {
            const T dyt = dy[t * d + c];
            const T dt = delta[t * d + c];
            const T xt = x[t * d + c];
            const T* ht = h + (t * d + c) * N;
            const T* hprev = t > 0 ? h + ((t - 1) * d + c) * N : nullptr;
            T* gc = g.data() + c * N;
            T dxa = 0;
            T ddt = 0;
            for (size_t i = 0; i < N; ++i) {
                const T gi = gc[i] + dyt * Ct[i];
                dCt[i] += dyt * ht[i];
                const T u = dt * a[i];
                const T abar = std::exp(u);
                const T zoh = zoh_factor_from_exp(u, abar);
                const T bbar = zoh * dt * Bt[i];
                const T hp = hprev ? hprev[i] : T(0);
                dxa += gi * bbar;
                dBt[i] += gi * zoh * dt * xt;
                // d(abar)/d(dt) = a*abar; d(bbar)/d(dt) = abar*B
                ddt += gi * (hp * a[i] * abar + xt * abar * Bt[i]);
                // d(abar)/da = dt*abar; d(bbar)/da = B*dt^2*zoh'(u)
                da[i] += gi * (hp * dt * abar + xt * Bt[i] * dt * dt * zoh_dfactor_from_exp(u, abar));
                gc[i] = gi * abar;
            }
            dx[t * d + c] += dxa;
            ddelta[t * d + c] += ddt;
        }
    }
}

}  // namespace vsmk::simd::scalar
