#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vsmk/errors.hpp"
#include "vsmk/fft.hpp"
#include "vsmk/simd/typed.hpp"
#include "vsmk/tensor.hpp"
#include "vsmk/zoh.hpp"

// Linear state-space layer: continuous parameters, zero-order-hold
// discretization, and three execution modes (recurrent, FFT kernel,
// input-conditioned selective). The trainable path uses a diagonal state
// matrix; the dense-matrix variant exists for double-precision verification.

namespace vsmk::ssm {

using std::size_t;

// Continuous-time system. Exactly one of `a` (diagonal, length N) or
// `A` (dense, N x N) is populated. B is [N, d_in], C is [d_out, N], the
// optional skip D is [d_out, d_in] (empty tensor = omitted).
template <typename T>
struct SsmParams {
    Tensor<T> a;
    Tensor<T> A;
    Tensor<T> B;
    Tensor<T> C;
    Tensor<T> D;
    T delta = T(1);

    bool diagonal() const { return a.size() > 0; }
    size_t states() const { return diagonal() ? a.size() : A.shape(0); }
};

template <typename T>
struct DiscreteSsm {
    Tensor<T> abar;  // [N] when diagonal, [N,N] when dense
    Tensor<T> bbar;  // [N, d_in]
    Tensor<T> C;     // [d_out, N]
    Tensor<T> D;     // optional [d_out, d_in]
    bool diagonal = true;

    size_t states() const { return diagonal ? abar.size() : abar.shape(0); }
    size_t d_in() const { return bbar.shape(1); }
    size_t d_out() const { return C.shape(0); }
};

// Per-timestep projections of the selective scan: each input token x_t in R^d
// produces delta_t = softplus(W_up (W_low x_t) + b_dt) in R^d (rank-reduced),
// B_t = W_B x_t + b_B and C_t = W_C x_t + b_C in R^N.
template <typename T>
struct SelectiveParams {
    Tensor<T> w_dt_low;  // [rank, d]
    Tensor<T> w_dt_up;   // [d, rank]
    Tensor<T> b_dt;      // [d]
    Tensor<T> w_B;       // [N, d]
    Tensor<T> b_B;       // [N]
    Tensor<T> w_C;       // [N, d]
    Tensor<T> b_C;       // [N]
};

// ===== Dense-matrix helpers (double-precision verification path) =====

// Matrix exponential by scaling-and-squaring with a Taylor core.
template <typename T>
Tensor<T> expm(const Tensor<T>& M) {
    if (M.rank() != 2 || M.shape(0) != M.shape(1))
        throw ShapeError("expm: need a square matrix, got " + M.shape_str());
    const size_t n = M.shape(0);

    T norm = 0;
    for (size_t i = 0; i < n; ++i) {
        T row = 0;
        for (size_t j = 0; j < n; ++j) row += std::abs(M.at(i, j));
        norm = std::max(norm, row);
    }
    int s = 0;
    T scaled = norm;
    while (scaled > T(0.5)) {
        scaled /= 2;
        ++s;
    }
    Tensor<T> A = M;
    const T inv_pow = std::ldexp(T(1), -s);
    for (size_t i = 0; i < A.size(); ++i) A[i] *= inv_pow;

    Tensor<T> R({n, n});
    Tensor<T> term({n, n});
    for (size_t i = 0; i < n; ++i) R.at(i, i) = term.at(i, i) = T(1);
    for (int k = 1; k <= 40; ++k) {
        Tensor<T> next({n, n});
        simd::k_gemm(n, n, n, term.data(), A.data(), next.data(), false);
        const T inv_k = T(1) / T(k);
        T tmax = 0;
        for (size_t i = 0; i < next.size(); ++i) {
            next[i] *= inv_k;
            tmax = std::max(tmax, std::abs(next[i]));
        }
        simd::k_add(R.data(), next.data(), R.data(), R.size());
        term = std::move(next);
        if (tmax < T(1e-19)) break;
    }
    for (int i = 0; i < s; ++i) {
        Tensor<T> sq({n, n});
        simd::k_gemm(n, n, n, R.data(), R.data(), sq.data(), false);
        R = std::move(sq);
    }
    return R;
}

namespace detail {

// Solves M z = rhs in place by Gaussian elimination with partial pivoting.
template <typename T>
std::vector<T> solve(Tensor<T> M, std::vector<T> rhs) {
    const size_t n = M.shape(0);
    for (size_t col = 0; col < n; ++col) {
        size_t piv = col;
        for (size_t r = col + 1; r < n; ++r)
            if (std::abs(M.at(r, col)) > std::abs(M.at(piv, col))) piv = r;
        if (std::abs(M.at(piv, col)) < T(1e-13))
            throw NumericError("singular time-scaled state matrix in discretization");
        if (piv != col) {
            for (size_t j = 0; j < n; ++j) std::swap(M.at(piv, j), M.at(col, j));
            std::swap(rhs[piv], rhs[col]);
        }
        for (size_t r = col + 1; r < n; ++r) {
            const T f = M.at(r, col) / M.at(col, col);
            if (f == T(0)) continue;
            for (size_t j = col; j < n; ++j) M.at(r, j) -= f * M.at(col, j);
            rhs[r] -= f * rhs[col];
        }
    }
    std::vector<T> z(n);
    for (size_t r = n; r-- > 0;) {
        T acc = rhs[r];
        for (size_t j = r + 1; j < n; ++j) acc -= M.at(r, j) * z[j];
        z[r] = acc / M.at(r, r);
    }
    return z;
}

}  // namespace detail

// ===== Discretization =====

// Zero-order hold: Abar = exp(dA), Bbar = (dA)^-1 (exp(dA) - I) (dB), with the
// truncated series d*(I + dA/2 + (dA)^2/6 + ...)B when dA is near-singular
// (max |d*A_ii| below the series cutoff; 6 terms).
template <typename T>
DiscreteSsm<T> discretize(const SsmParams<T>& p) {
    if (!(p.delta > T(0)))
        throw ConfigError("discretize: time scale must be positive, got " +
                          std::to_string(double(p.delta)));
    DiscreteSsm<T> d;
    d.C = p.C;
    d.D = p.D;
    const T dt = p.delta;

    if (p.diagonal()) {
        const size_t N = p.a.size();
        if (p.B.rank() != 2 || p.B.shape(0) != N)
            throw ShapeError("discretize: B " + p.B.shape_str() + " vs N=" + std::to_string(N));
        d.diagonal = true;
        d.abar = Tensor<T>({N});
        d.bbar = Tensor<T>(p.B.shape());
        const size_t din = p.B.shape(1);
        for (size_t i = 0; i < N; ++i) {
            const T u = dt * p.a[i];
            const T abar = std::exp(u);
            d.abar[i] = abar;
            const T f = zoh_factor_from_exp(u, abar) * dt;
            for (size_t j = 0; j < din; ++j) d.bbar.at(i, j) = f * p.B.at(i, j);
        }
        return d;
    }

    const size_t N = p.A.shape(0);
    if (p.A.rank() != 2 || p.A.shape(1) != N || p.B.rank() != 2 || p.B.shape(0) != N)
        throw ShapeError("discretize: A " + p.A.shape_str() + " with B " + p.B.shape_str());
    d.diagonal = false;
    Tensor<T> dA = p.A;
    for (size_t i = 0; i < dA.size(); ++i) dA[i] *= dt;
    d.abar = expm(dA);

    const size_t din = p.B.shape(1);
    d.bbar = Tensor<T>({N, din});
    T amax = 0;
    for (size_t i = 0; i < dA.size(); ++i) amax = std::max(amax, std::abs(dA[i]));
    if (amax < zoh_series_cutoff<T>()) {
        // Bbar = dt * (I + dA/2 + dA^2/6 + dA^3/24 + dA^4/120 + dA^5/720) B
        Tensor<T> acc = p.B;       // series sum applied to B
        Tensor<T> pw = p.B;        // dA^k B / (k+1)!
        for (int k = 1; k <= 5; ++k) {
            Tensor<T> next({N, din});
            simd::k_gemm(N, din, N, dA.data(), pw.data(), next.data(), false);
            const T inv = T(1) / T(k + 1);
            for (size_t i = 0; i < next.size(); ++i) next[i] *= inv;
            simd::k_add(acc.data(), next.data(), acc.data(), acc.size());
            pw = std::move(next);
        }
        for (size_t i = 0; i < acc.size(); ++i) d.bbar[i] = dt * acc[i];
    } else {
        // Solve (dA) z = (Abar - I)(dt * B) column by column.
        for (size_t j = 0; j < din; ++j) {
            std::vector<T> rhs(N);
            for (size_t i = 0; i < N; ++i) {
                T acc = 0;
                for (size_t k = 0; k < N; ++k)
                    acc += (d.abar.at(i, k) - (i == k ? T(1) : T(0))) * (dt * p.B.at(k, j));
                rhs[i] = acc;
            }
            auto z = detail::solve(dA, std::move(rhs));
            for (size_t i = 0; i < N; ++i) d.bbar.at(i, j) = z[i];
        }
    }
    return d;
}

// ===== Execution modes =====

namespace detail {
template <typename T>
void check_scan_input(const DiscreteSsm<T>& d, const Tensor<T>& x) {
    if (x.rank() != 2 || x.shape(1) != d.d_in())
        throw ShapeError("scan: input " + x.shape_str() + " does not match d_in=" +
                         std::to_string(d.d_in()));
    if (d.C.rank() != 2 || d.C.shape(1) != d.states())
        throw ShapeError("scan: readout " + d.C.shape_str() + " vs N=" +
                         std::to_string(d.states()));
}
}  // namespace detail

// Sequential recurrence h_t = Abar h_{t-1} + Bbar x_t, y_t = C h_t (+ D x_t).
// O(L * N * d) time for the diagonal form, O(N) extra state.
template <typename T>
Tensor<T> scan_recurrent(const DiscreteSsm<T>& d, const Tensor<T>& x) {
    detail::check_scan_input(d, x);
    const size_t L = x.shape(0), din = d.d_in(), dout = d.d_out(), N = d.states();
    Tensor<T> y({L, dout});
    std::vector<T> h(N, T(0)), hn(N);
    for (size_t t = 0; t < L; ++t) {
        const T* xt = x.data() + t * din;
        if (d.diagonal) {
            for (size_t i = 0; i < N; ++i) {
                T acc = d.abar[i] * h[i];
                for (size_t j = 0; j < din; ++j) acc += d.bbar.at(i, j) * xt[j];
                hn[i] = acc;
            }
        } else {
            for (size_t i = 0; i < N; ++i) {
                T acc = 0;
                for (size_t k = 0; k < N; ++k) acc += d.abar.at(i, k) * h[k];
                for (size_t j = 0; j < din; ++j) acc += d.bbar.at(i, j) * xt[j];
                hn[i] = acc;
            }
        }
        std::swap(h, hn);
        T* yt = y.data() + t * dout;
        for (size_t o = 0; o < dout; ++o) {
            T acc = simd::k_dot(d.C.data() + o * N, h.data(), N);
            if (d.D.size() > 0)
                for (size_t j = 0; j < din; ++j) acc += d.D.at(o, j) * xt[j];
            yt[o] = acc;
        }
    }
    return y;
}

// Impulse-response kernel K_i = C Abar^i Bbar, i in [0, L), built by iterated
// state propagation (never by explicit matrix powers).
template <typename T>
Tensor<T> build_kernel(const DiscreteSsm<T>& d, size_t L) {
    const size_t N = d.states(), din = d.d_in(), dout = d.d_out();
    Tensor<T> K({L, dout, din});
    Tensor<T> P = d.bbar;  // Abar^i Bbar, [N, din]
    for (size_t i = 0; i < L; ++i) {
        simd::k_gemm(dout, din, N, d.C.data(), P.data(), K.data() + i * dout * din, false);
        if (i + 1 == L) break;
        if (d.diagonal) {
            for (size_t r = 0; r < N; ++r)
                for (size_t j = 0; j < din; ++j) P.at(r, j) *= d.abar[r];
        } else {
            Tensor<T> Pn({N, din});
            simd::k_gemm(N, din, N, d.abar.data(), P.data(), Pn.data(), false);
            P = std::move(Pn);
        }
    }
    return K;
}

// Kernel mode: y[:, o] = sum_j causal_conv(K[:, o, j], x[:, j]) via FFT.
template <typename T>
Tensor<T> scan_kernel(const DiscreteSsm<T>& d, const Tensor<T>& x) {
    detail::check_scan_input(d, x);
    const size_t L = x.shape(0), din = d.d_in(), dout = d.d_out();
    Tensor<T> K = build_kernel(d, L);
    Tensor<T> y({L, dout});
    std::vector<T> tmp(L);
    for (size_t o = 0; o < dout; ++o)
        for (size_t j = 0; j < din; ++j) {
            fft::convolve(x.data() + j, L, din, K.data() + o * din + j, L, dout * din,
                          tmp.data(), L, 1);
            for (size_t t = 0; t < L; ++t) y.at(t, o) += tmp[t];
        }
    if (d.D.size() > 0)
        for (size_t t = 0; t < L; ++t)
            for (size_t o = 0; o < dout; ++o)
                for (size_t j = 0; j < din; ++j) y.at(t, o) += d.D.at(o, j) * x.at(t, j);
    return y;
}

// Materialized per-timestep projections for a sequence.
template <typename T>
struct SelectiveInputs {
    Tensor<T> delta;  // [L, d]
    Tensor<T> B;      // [L, N]
    Tensor<T> C;      // [L, N]
};

template <typename T>
SelectiveInputs<T> project_selective(const SelectiveParams<T>& sp, const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("selective_scan: input must be [L,d]");
    const size_t L = x.shape(0), dch = x.shape(1);
    const size_t rank = sp.w_dt_low.shape(0), N = sp.w_B.shape(0);
    if (sp.w_dt_low.shape(1) != dch || sp.w_dt_up.shape(0) != dch ||
        sp.w_dt_up.shape(1) != rank || sp.b_dt.size() != dch || sp.w_B.shape(1) != dch ||
        sp.b_B.size() != N || !sp.w_C.same_shape(sp.w_B) || sp.b_C.size() != N)
        throw ShapeError("selective_scan: projection shapes do not match input " + x.shape_str());

    SelectiveInputs<T> out{Tensor<T>({L, dch}), Tensor<T>({L, N}), Tensor<T>({L, N})};
    std::vector<T> low(rank);
    for (size_t t = 0; t < L; ++t) {
        const T* xt = x.data() + t * dch;
        for (size_t r = 0; r < rank; ++r) low[r] = simd::k_dot(sp.w_dt_low.data() + r * dch, xt, dch);
        for (size_t c = 0; c < dch; ++c) {
            const T raw = simd::k_dot(sp.w_dt_up.data() + c * rank, low.data(), rank) + sp.b_dt[c];
            out.delta.at(t, c) = raw > T(20) ? raw : std::log1p(std::exp(raw));
        }
        for (size_t i = 0; i < N; ++i) {
            out.B.at(t, i) = simd::k_dot(sp.w_B.data() + i * dch, xt, dch) + sp.b_B[i];
            out.C.at(t, i) = simd::k_dot(sp.w_C.data() + i * dch, xt, dch) + sp.b_C[i];
        }
    }
    return out;
}

// Input-conditioned scan: per timestep, (delta_t, B_t, C_t) derive from x_t,
// the shared diagonal A is discretized with delta_t, and the recurrence runs
// sequentially (kernel mode is unavailable since parameters vary per step).
template <typename T>
Tensor<T> selective_scan(const SelectiveParams<T>& sp, const SsmParams<T>& base,
                         const Tensor<T>& x) {
    if (!base.diagonal())
        throw ConfigError("selective_scan requires the diagonal parameterization");
    auto proj = project_selective(sp, x);
    const size_t L = x.shape(0), dch = x.shape(1), N = base.a.size();
    if (sp.w_B.shape(0) != N)
        throw ShapeError("selective_scan: projection N=" + std::to_string(sp.w_B.shape(0)) +
                         " vs state size " + std::to_string(N));
    Tensor<T> h({L, dch, N});
    Tensor<T> y({L, dch});
    simd::k_s6_fwd(L, dch, N, base.a.data(), proj.delta.data(), proj.B.data(), proj.C.data(),
                   x.data(), h.data(), y.data());
    return y;
}

}  // namespace vsmk::ssm
