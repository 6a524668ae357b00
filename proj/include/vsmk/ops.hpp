#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "vsmk/autograd.hpp"
#include "vsmk/fft.hpp"
#include "vsmk/rng.hpp"
#include "vsmk/simd/typed.hpp"
#include "vsmk/tensor.hpp"

// Differentiable tensor ops. Each op validates shapes, computes its value via
// the kernel layer, and registers a backward closure on the tape. Closures
// re-fetch values/gradients through the tape (never by captured reference).

namespace vsmk::ops {

using std::size_t;

// ===== Elementwise =====

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    Tape<T>& t = *a.tape;
    check_same_shape(t.val(a), t.val(b), "add");
    Tensor<T> y(t.val(a).shape());
    simd::k_add(t.val(a).data(), t.val(b).data(), y.data(), y.size());
    const bool rg = t.needs_grad(a) || t.needs_grad(b);
    return t.node(std::move(y), rg, [a, b](Tape<T>& tp, Var<T> self) {
        const Tensor<T>& dy = tp.grad(self);
        tp.acc_grad(a, dy);
        tp.acc_grad(b, dy);
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    Tape<T>& t = *a.tape;
    check_same_shape(t.val(a), t.val(b), "sub");
    Tensor<T> y(t.val(a).shape());
    simd::k_sub(t.val(a).data(), t.val(b).data(), y.data(), y.size());
    const bool rg = t.needs_grad(a) || t.needs_grad(b);
    return t.node(std::move(y), rg, [a, b](Tape<T>& tp, Var<T> self) {
        const Tensor<T>& dy = tp.grad(self);
        tp.acc_grad(a, dy);
        if (tp.needs_grad(b))
            simd::k_axpy(T(-1), dy.data(), tp.grad(b).data(), dy.size());
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    Tape<T>& t = *a.tape;
    check_same_shape(t.val(a), t.val(b), "mul");
    Tensor<T> y(t.val(a).shape());
    simd::k_mul(t.val(a).data(), t.val(b).data(), y.data(), y.size());
    const bool rg = t.needs_grad(a) || t.needs_grad(b);
    return t.node(std::move(y), rg, [a, b](Tape<T>& tp, Var<T> self) {
        const Tensor<T>& dy = tp.grad(self);
        if (tp.needs_grad(a))
            simd::k_fma(dy.data(), tp.val(b).data(), tp.grad(a).data(), dy.size());
        if (tp.needs_grad(b))
            simd::k_fma(dy.data(), tp.val(a).data(), tp.grad(b).data(), dy.size());
    });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
    Tape<T>& t = *a.tape;
    Tensor<T> y(t.val(a).shape());
    simd::k_scale(t.val(a).data(), s, y.data(), y.size());
    return t.node(std::move(y), t.needs_grad(a), [a, s](Tape<T>& tp, Var<T> self) {
        if (tp.needs_grad(a))
            simd::k_axpy(s, tp.grad(self).data(), tp.grad(a).data(), tp.grad(self).size());
    });
}

template <typename T>
Var<T> neg(Var<T> a) {
    return scale(a, T(-1));
}

// Elementwise multiply by a constant tensor (no gradient through c).
template <typename T>
Var<T> cmul(Var<T> a, Tensor<T> c) {
    Tape<T>& t = *a.tape;
    check_same_shape(t.val(a), c, "cmul");
    Tensor<T> y(c.shape());
    simd::k_mul(t.val(a).data(), c.data(), y.data(), y.size());
    return t.node(std::move(y), t.needs_grad(a),
                  [a, c = std::move(c)](Tape<T>& tp, Var<T> self) {
                      if (tp.needs_grad(a))
                          simd::k_fma(tp.grad(self).data(), c.data(), tp.grad(a).data(), c.size());
                  });
}

template <typename T>
Var<T> vexp(Var<T> a) {
    Tape<T>& t = *a.tape;
    Tensor<T> y(t.val(a).shape());
    for (size_t i = 0; i < y.size(); ++i) y[i] = std::exp(t.val(a)[i]);
    return t.node(std::move(y), t.needs_grad(a), [a](Tape<T>& tp, Var<T> self) {
        if (!tp.needs_grad(a)) return;
        simd::k_fma(tp.grad(self).data(), tp.val(self).data(), tp.grad(a).data(),
                    tp.grad(self).size());
    });
}

template <typename T>
Var<T> vlog(Var<T> a) {
    Tape<T>& t = *a.tape;
    Tensor<T> y(t.val(a).shape());
    for (size_t i = 0; i < y.size(); ++i) y[i] = std::log(t.val(a)[i]);
    return t.node(std::move(y), t.needs_grad(a), [a](Tape<T>& tp, Var<T> self) {
        if (!tp.needs_grad(a)) return;
        const Tensor<T>& dy = tp.grad(self);
        Tensor<T>& da = tp.grad(a);
        const Tensor<T>& x = tp.val(a);
        for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] / x[i];
    });
}

template <typename T>
Var<T> relu(Var<T> a) {
    Tape<T>& t = *a.tape;
    Tensor<T> y(t.val(a).shape());
    simd::k_relu(t.val(a).data(), y.data(), y.size());
    return t.node(std::move(y), t.needs_grad(a), [a](Tape<T>& tp, Var<T> self) {
        if (!tp.needs_grad(a)) return;
        simd::k_relu_bwd(tp.val(a).data(), tp.grad(self).data(), tp.grad(a).data(),
                         tp.grad(self).size());
    });
}

// softplus(x) = log(1 + e^x); numerically stable form, derivative sigmoid(x).
template <typename T>
Var<T> softplus(Var<T> a) {
    Tape<T>& t = *a.tape;
    Tensor<T> y(t.val(a).shape());
    for (size_t i = 0; i < y.size(); ++i) {
        const T x = t.val(a)[i];
        y[i] = x > T(20) ? x : std::log1p(std::exp(x));
    }
    return t.node(std::move(y), t.needs_grad(a), [a](Tape<T>& tp, Var<T> self) {
        if (!tp.needs_grad(a)) return;
        const Tensor<T>& dy = tp.grad(self);
        Tensor<T>& da = tp.grad(a);
        const Tensor<T>& x = tp.val(a);
        for (size_t i = 0; i < dy.size(); ++i)
            da[i] += dy[i] / (T(1) + std::exp(-x[i]));
    });
}

// ===== Broadcast bias =====

// x viewed as [R, C] rows plus a length-C row vector.
template <typename T>
Var<T> add_rowvec(Var<T> x, Var<T> b) {
    Tape<T>& t = *x.tape;
    const size_t C = t.val(b).size();
    if (t.val(b).rank() != 1 || t.val(x).size() % C != 0)
        throw ShapeError("add_rowvec: " + t.val(x).shape_str() + " vs " + t.val(b).shape_str());
    const size_t R = t.val(x).size() / C;
    Tensor<T> y(t.val(x).shape());
    for (size_t r = 0; r < R; ++r)
        simd::k_add(t.val(x).data() + r * C, t.val(b).data(), y.data() + r * C, C);
    const bool rg = t.needs_grad(x) || t.needs_grad(b);
    return t.node(std::move(y), rg, [x, b, R, C](Tape<T>& tp, Var<T> self) {
        const Tensor<T>& dy = tp.grad(self);
        tp.acc_grad(x, dy);
        if (tp.needs_grad(b)) {
            Tensor<T>& db = tp.grad(b);
            for (size_t r = 0; r < R; ++r)
                simd::k_add(db.data(), dy.data() + r * C, db.data(), C);
        }
    });
}

// ===== Matrix product and affine map =====

namespace detail {
template <typename T>
inline std::vector<T> transposed(const T* a, size_t rows, size_t cols) {
    std::vector<T> at(rows * cols);
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < cols; ++j) at[j * rows + i] = a[i * cols + j];
    return at;
}
}  // namespace detail

// 2-D [m,k]x[k,n]; rank-3 lhs broadcasts the rhs ([B,m,k]x[k,n]) or zips with a
// rank-3 rhs ([B,m,k]x[B,k,n]).
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& av = t.val(a);
    const Tensor<T>& bv = t.val(b);
    const bool batched = av.rank() == 3;
    if ((av.rank() != 2 && av.rank() != 3) || (bv.rank() != 2 && bv.rank() != 3) ||
        (bv.rank() == 3 && !batched))
        throw ShapeError("matmul: unsupported ranks " + av.shape_str() + " x " + bv.shape_str());
    const size_t B = batched ? av.shape(0) : 1;
    const size_t m = av.shape(batched ? 1 : 0);
    const size_t k = av.shape(batched ? 2 : 1);
    const bool bbatched = bv.rank() == 3;
    if (bv.shape(bbatched ? 1 : 0) != k || (bbatched && bv.shape(0) != B))
        throw ShapeError("matmul: inner dims " + av.shape_str() + " x " + bv.shape_str());
    const size_t n = bv.shape(bbatched ? 2 : 1);

    Tensor<T> y(batched ? typename Tensor<T>::Shape{B, m, n} : typename Tensor<T>::Shape{m, n});
    for (size_t i = 0; i < B; ++i)
        simd::k_gemm(m, n, k, av.data() + i * m * k, bv.data() + (bbatched ? i * k * n : 0),
                     y.data() + i * m * n, false);
    const bool rg = t.needs_grad(a) || t.needs_grad(b);
    return t.node(std::move(y), rg, [a, b, B, m, n, k, bbatched](Tape<T>& tp, Var<T> self) {
        const Tensor<T>& dy = tp.grad(self);
        const Tensor<T>& av2 = tp.val(a);
        const Tensor<T>& bv2 = tp.val(b);
        for (size_t i = 0; i < B; ++i) {
            const T* dyi = dy.data() + i * m * n;
            const T* ai = av2.data() + i * m * k;
            const T* bi = bv2.data() + (bbatched ? i * k * n : 0);
            if (tp.needs_grad(a)) {
                auto bt = detail::transposed(bi, k, n);  // [n,k]
                simd::k_gemm(m, k, n, dyi, bt.data(), tp.grad(a).data() + i * m * k, true);
            }
            if (tp.needs_grad(b)) {
                auto at = detail::transposed(ai, m, k);  // [k,m]
                simd::k_gemm(k, n, m, at.data(), dyi,
                             tp.grad(b).data() + (bbatched ? i * k * n : 0), true);
            }
        }
    });
}

// y = x W^T + bias, with x [R,in] (leading dims folded), W [out,in], bias [out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = t.val(x);
    const Tensor<T>& wv = t.val(w);
    if (wv.rank() != 2) throw ShapeError("linear: weight must be rank-2, got " + wv.shape_str());
    const size_t in = wv.shape(1);
    const size_t out = wv.shape(0);
    if (xv.rank() < 1 || xv.shape(xv.rank() - 1) != in)
        throw ShapeError("linear: input " + xv.shape_str() + " incompatible with weight " +
                         wv.shape_str());
    if (t.val(bias).size() != out)
        throw ShapeError("linear: bias " + t.val(bias).shape_str() + " vs out dim " +
                         std::to_string(out));
    const size_t R = xv.size() / in;

    auto wt = detail::transposed(wv.data(), out, in);  // [in,out]
    typename Tensor<T>::Shape yshape(xv.shape());
    yshape.back() = out;
    Tensor<T> y(yshape);
    simd::k_gemm(R, out, in, xv.data(), wt.data(), y.data(), false);
    for (size_t r = 0; r < R; ++r)
        simd::k_add(y.data() + r * out, t.val(bias).data(), y.data() + r * out, out);

    const bool rg = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(bias);
    return t.node(std::move(y), rg, [x, w, bias, R, in, out](Tape<T>& tp, Var<T> self) {
        const Tensor<T>& dy = tp.grad(self);
        if (tp.needs_grad(x))
            simd::k_gemm(R, in, out, dy.data(), tp.val(w).data(), tp.grad(x).data(), true);
        if (tp.needs_grad(w)) {
            auto dyt = detail::transposed(dy.data(), R, out);  // [out,R]
            simd::k_gemm(out, in, R, dyt.data(), tp.val(x).data(), tp.grad(w).data(), true);
        }
        if (tp.needs_grad(bias)) {
            Tensor<T>& db = tp.grad(bias);
            for (size_t r = 0; r < R; ++r)
                simd::k_add(db.data(), dy.data() + r * out, db.data(), out);
        }
    });
}

// ===== Convolution =====

namespace detail {

template <typename T>
void im2col(const T* x, size_t C, size_t H, size_t W, size_t kh, size_t kw, size_t stride,
            size_t pad, size_t Ho, size_t Wo, T* col) {
    // col [C*kh*kw, Ho*Wo]
    size_t row = 0;
    for (size_t c = 0; c < C; ++c) {
        for (size_t dy = 0; dy < kh; ++dy) {
            for (size_t dx = 0; dx < kw; ++dx, ++row) {
                T* dst = col + row * Ho * Wo;
                for (size_t oy = 0; oy < Ho; ++oy) {
                    const long iy = long(oy * stride + dy) - long(pad);
                    if (iy < 0 || iy >= long(H)) {
                        for (size_t ox = 0; ox < Wo; ++ox) dst[oy * Wo + ox] = T(0);
                        continue;
                    }
                    const T* src = x + (c * H + size_t(iy)) * W;
                    for (size_t ox = 0; ox < Wo; ++ox) {
                        const long ix = long(ox * stride + dx) - long(pad);
                        dst[oy * Wo + ox] = (ix >= 0 && ix < long(W)) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_acc(const T* col, size_t C, size_t H, size_t W, size_t kh, size_t kw, size_t stride,
                size_t pad, size_t Ho, size_t Wo, T* dx) {
    size_t row = 0;
    for (size_t c = 0; c < C; ++c) {
        for (size_t dy = 0; dy < kh; ++dy) {
            for (size_t dx_ = 0; dx_ < kw; ++dx_, ++row) {
                const T* src = col + row * Ho * Wo;
                for (size_t oy = 0; oy < Ho; ++oy) {
                    const long iy = long(oy * stride + dy) - long(pad);
                    if (iy < 0 || iy >= long(H)) continue;
                    T* dst = dx + (c * H + size_t(iy)) * W;
                    for (size_t ox = 0; ox < Wo; ++ox) {
                        const long ix = long(ox * stride + dx_) - long(pad);
                        if (ix >= 0 && ix < long(W)) dst[ix] += src[oy * Wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// x [B,Cin,H,W], w [Cout,Cin,kh,kw], bias [Cout] -> [B,Cout,Ho,Wo].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, size_t stride, size_t pad) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = t.val(x);
    const Tensor<T>& wv = t.val(w);
    if (xv.rank() != 4 || wv.rank() != 4)
        throw ShapeError("conv2d: need rank-4 input/weight, got " + xv.shape_str() + " and " +
                         wv.shape_str());
    const size_t B = xv.shape(0), Cin = xv.shape(1), H = xv.shape(2), W = xv.shape(3);
    const size_t Cout = wv.shape(0), kh = wv.shape(2), kw = wv.shape(3);
    if (wv.shape(1) != Cin)
        throw ShapeError("conv2d: channel mismatch " + xv.shape_str() + " vs " + wv.shape_str());
    if (t.val(bias).size() != Cout)
        throw ShapeError("conv2d: bias size " + std::to_string(t.val(bias).size()) +
                         " vs Cout " + std::to_string(Cout));
    if (H + 2 * pad < kh || W + 2 * pad < kw)
        throw ShapeError("conv2d: kernel larger than padded input");
    const size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const size_t Wo = (W + 2 * pad - kw) / stride + 1;
    const size_t K = Cin * kh * kw;
    const size_t L = Ho * Wo;

    auto col = std::make_shared<Tensor<T>>(typename Tensor<T>::Shape{B, K, L});
    Tensor<T> y({B, Cout, Ho, Wo});
    for (size_t i = 0; i < B; ++i) {
        T* coli = col->data() + i * K * L;
        detail::im2col(xv.data() + i * Cin * H * W, Cin, H, W, kh, kw, stride, pad, Ho, Wo, coli);
        T* yi = y.data() + i * Cout * L;
        simd::k_gemm(Cout, L, K, wv.data(), coli, yi, false);
        for (size_t c = 0; c < Cout; ++c) {
            const T bc = t.val(bias)[c];
            T* row = yi + c * L;
            for (size_t l = 0; l < L; ++l) row[l] += bc;
        }
    }
    const bool rg = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(bias);
    return t.node(std::move(y), rg,
                  [x, w, bias, col, B, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo, K,
                   L](Tape<T>& tp, Var<T> self) {
                      const Tensor<T>& dy = tp.grad(self);
                      std::vector<T> wt;
                      if (tp.needs_grad(x))
                          wt = detail::transposed(tp.val(w).data(), Cout, K);  // [K,Cout]
                      std::vector<T> dcol(K * L);
                      for (size_t i = 0; i < B; ++i) {
                          const T* dyi = dy.data() + i * Cout * L;
                          const T* coli = col->data() + i * K * L;
                          if (tp.needs_grad(w)) {
                              auto colt = detail::transposed(coli, K, L);  // [L,K]
                              simd::k_gemm(Cout, K, L, dyi, colt.data(), tp.grad(w).data(), true);
                          }
                          if (tp.needs_grad(x)) {
                              simd::k_gemm(K, L, Cout, wt.data(), dyi, dcol.data(), false);
                              detail::col2im_acc(dcol.data(), Cin, H, W, kh, kw, stride, pad, Ho,
                                                 Wo, tp.grad(x).data() + i * Cin * H * W);
                          }
                          if (tp.needs_grad(bias)) {
                              Tensor<T>& db = tp.grad(bias);
                              for (size_t c = 0; c < Cout; ++c)
                                  db[c] += simd::k_sum(dyi + c * L, L);
                          }
                      }
                  });
}

// ===== Softmax and normalization =====

// Softmax over the last axis.
template <typename T>
Var<T> softmax_rows(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = t.val(x);
    if (xv.rank() < 1) throw ShapeError("softmax_rows: rank-0 input");
    const size_t C = xv.shape(xv.rank() - 1);
    const size_t R = xv.size() / C;
    Tensor<T> y(xv.shape());
    for (size_t r = 0; r < R; ++r) {
        const T* xr = xv.data() + r * C;
        T* yr = y.data() + r * C;
        T m = xr[0];
        for (size_t j = 1; j < C; ++j) m = std::max(m, xr[j]);
        T s = 0;
        for (size_t j = 0; j < C; ++j) {
            yr[j] = std::exp(xr[j] - m);
            s += yr[j];
        }
        const T inv = T(1) / s;
        for (size_t j = 0; j < C; ++j) yr[j] *= inv;
    }
    return t.node(std::move(y), t.needs_grad(x), [x, R, C](Tape<T>& tp, Var<T> self) {
        if (!tp.needs_grad(x)) return;
        const Tensor<T>& y2 = tp.val(self);
        const Tensor<T>& dy = tp.grad(self);
        Tensor<T>& dx = tp.grad(x);
        for (size_t r = 0; r < R; ++r) {
            const T* yr = y2.data() + r * C;
            const T* dyr = dy.data() + r * C;
            T* dxr = dx.data() + r * C;
            const T dot = simd::k_dot(dyr, yr, C);
            for (size_t j = 0; j < C; ++j) dxr[j] += (dyr[j] - dot) * yr[j];
        }
    });
}

namespace detail {
// Shared backward for per-group normalization: group data stored row-wise.
template <typename T>
struct NormStats {
    std::vector<T> mean, rstd;
};
}  // namespace detail

// Layer norm over the last axis with learned per-feature scale/shift.
template <typename T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = t.val(x);
    const size_t C = t.val(gamma).size();
    if (xv.rank() < 1 || xv.shape(xv.rank() - 1) != C || t.val(beta).size() != C)
        throw ShapeError("layer_norm_rows: input " + xv.shape_str() + ", gamma " +
                         t.val(gamma).shape_str() + ", beta " + t.val(beta).shape_str());
    const size_t R = xv.size() / C;
    auto stats = std::make_shared<detail::NormStats<T>>();
    stats->mean.resize(R);
    stats->rstd.resize(R);
    Tensor<T> y(xv.shape());
    for (size_t r = 0; r < R; ++r) {
        const T* xr = xv.data() + r * C;
        T mu = simd::k_sum(xr, C) / T(C);
        T var = 0;
        for (size_t j = 0; j < C; ++j) {
            const T d = xr[j] - mu;
            var += d * d;
        }
        var /= T(C);
        const T rstd = T(1) / std::sqrt(var + eps);
        stats->mean[r] = mu;
        stats->rstd[r] = rstd;
        T* yr = y.data() + r * C;
        const T* g = t.val(gamma).data();
        const T* b = t.val(beta).data();
        for (size_t j = 0; j < C; ++j) yr[j] = (xr[j] - mu) * rstd * g[j] + b[j];
    }
    const bool rg = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
    return t.node(std::move(y), rg, [x, gamma, beta, stats, R, C](Tape<T>& tp, Var<T> self) {
        const Tensor<T>& dy = tp.grad(self);
        const Tensor<T>& xv2 = tp.val(x);
        const T* g = tp.val(gamma).data();
        std::vector<T> xh(C), dxh(C);
        for (size_t r = 0; r < R; ++r) {
            const T* xr = xv2.data() + r * C;
            const T* dyr = dy.data() + r * C;
            const T mu = stats->mean[r];
            const T rstd = stats->rstd[r];
            for (size_t j = 0; j < C; ++j) xh[j] = (xr[j] - mu) * rstd;
            if (tp.needs_grad(gamma)) {
                Tensor<T>& dg = tp.grad(gamma);
                for (size_t j = 0; j < C; ++j) dg[j] += dyr[j] * xh[j];
            }
            if (tp.needs_grad(beta)) {
                Tensor<T>& db = tp.grad(beta);
                simd::k_add(db.data(), dyr, db.data(), C);
            }
            if (tp.needs_grad(x)) {
                for (size_t j = 0; j < C; ++j) dxh[j] = dyr[j] * g[j];
                T m1 = simd::k_sum(dxh.data(), C) / T(C);
                T m2 = simd::k_dot(dxh.data(), xh.data(), C) / T(C);
                T* dxr = tp.grad(x).data() + r * C;
                for (size_t j = 0; j < C; ++j) dxr[j] += rstd * (dxh[j] - m1 - xh[j] * m2);
            }
        }
    });
}

// Per-sample, per-channel normalization over the spatial plane (no running
// statistics, so train and eval behave identically and the result does not
// depend on batch composition). x [B,C,H,W]; gamma/beta [C].
template <typename T>
Var<T> channel_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = t.val(x);
    if (xv.rank() != 4) throw ShapeError("channel_norm: need rank-4 input, got " + xv.shape_str());
    const size_t B = xv.shape(0), C = xv.shape(1), M = xv.shape(2) * xv.shape(3);
    if (t.val(gamma).size() != C || t.val(beta).size() != C)
        throw ShapeError("channel_norm: gamma/beta size mismatch with C=" + std::to_string(C));
    auto stats = std::make_shared<detail::NormStats<T>>();
    stats->mean.resize(B * C);
    stats->rstd.resize(B * C);
    Tensor<T> y(xv.shape());
    for (size_t p = 0; p < B * C; ++p) {
        const T* xp = xv.data() + p * M;
        T mu = simd::k_sum(xp, M) / T(M);
        T var = 0;
        for (size_t j = 0; j < M; ++j) {
            const T d = xp[j] - mu;
            var += d * d;
        }
        var /= T(M);
        const T rstd = T(1) / std::sqrt(var + eps);
        stats->mean[p] = mu;
        stats->rstd[p] = rstd;
        const size_t c = p % C;
        const T g = t.val(gamma)[c];
        const T b = t.val(beta)[c];
        T* yp = y.data() + p * M;
        for (size_t j = 0; j < M; ++j) yp[j] = (xp[j] - mu) * rstd * g + b;
    }
    const bool rg = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
    return t.node(std::move(y), rg, [x, gamma, beta, stats, B, C, M](Tape<T>& tp, Var<T> self) {
        const Tensor<T>& dy = tp.grad(self);
        const Tensor<T>& xv2 = tp.val(x);
        std::vector<T> xh(M), dxh(M);
        for (size_t p = 0; p < B * C; ++p) {
            const size_t c = p % C;
            const T* xp = xv2.data() + p * M;
            const T* dyp = dy.data() + p * M;
            const T mu = stats->mean[p];
            const T rstd = stats->rstd[p];
            for (size_t j = 0; j < M; ++j) xh[j] = (xp[j] - mu) * rstd;
            if (tp.needs_grad(gamma)) tp.grad(gamma)[c] += simd::k_dot(dyp, xh.data(), M);
            if (tp.needs_grad(beta)) tp.grad(beta)[c] += simd::k_sum(dyp, M);
            if (tp.needs_grad(x)) {
                const T g = tp.val(gamma)[c];
                for (size_t j = 0; j < M; ++j) dxh[j] = dyp[j] * g;
                T m1 = simd::k_sum(dxh.data(), M) / T(M);
                T m2 = simd::k_dot(dxh.data(), xh.data(), M) / T(M);
                T* dxp = tp.grad(x).data() + p * M;
                for (size_t j = 0; j < M; ++j) dxp[j] += rstd * (dxh[j] - m1 - xh[j] * m2);
            }
        }
    });
}

// ===== Reductions and pooling =====

template <typename T>
Var<T> reduce_sum(Var<T> x) {
    Tape<T>& t = *x.tape;
    Tensor<T> y = Tensor<T>::scalar(simd::k_sum(t.val(x).data(), t.val(x).size()));
    return t.node(std::move(y), t.needs_grad(x), [x](Tape<T>& tp, Var<T> self) {
        if (!tp.needs_grad(x)) return;
        const T g = tp.grad(self)[0];
        Tensor<T>& dx = tp.grad(x);
        for (size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    });
}

template <typename T>
Var<T> reduce_mean(Var<T> x) {
    Tape<T>& t = *x.tape;
    const size_t n = t.val(x).size();
    Tensor<T> y = Tensor<T>::scalar(simd::k_sum(t.val(x).data(), n) / T(n));
    return t.node(std::move(y), t.needs_grad(x), [x, n](Tape<T>& tp, Var<T> self) {
        if (!tp.needs_grad(x)) return;
        const T g = tp.grad(self)[0] / T(n);
        Tensor<T>& dx = tp.grad(x);
        for (size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    });
}

// Max over all elements; the subgradient flows to the first maximal element.
template <typename T>
Var<T> reduce_max(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = t.val(x);
    size_t arg = 0;
    for (size_t i = 1; i < xv.size(); ++i)
        if (xv[i] > xv[arg]) arg = i;
    Tensor<T> y = Tensor<T>::scalar(xv[arg]);
    return t.node(std::move(y), t.needs_grad(x), [x, arg](Tape<T>& tp, Var<T> self) {
        if (tp.needs_grad(x)) tp.grad(x)[arg] += tp.grad(self)[0];
    });
}

// [B,C,H,W] -> [B,C], mean over the spatial plane.
template <typename T>
Var<T> global_avg_pool(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = t.val(x);
    if (xv.rank() != 4) throw ShapeError("global_avg_pool: need rank-4, got " + xv.shape_str());
    const size_t B = xv.shape(0), C = xv.shape(1), M = xv.shape(2) * xv.shape(3);
    Tensor<T> y({B, C});
    for (size_t p = 0; p < B * C; ++p) y[p] = simd::k_sum(xv.data() + p * M, M) / T(M);
    return t.node(std::move(y), t.needs_grad(x), [x, B, C, M](Tape<T>& tp, Var<T> self) {
        if (!tp.needs_grad(x)) return;
        const Tensor<T>& dy = tp.grad(self);
        Tensor<T>& dx = tp.grad(x);
        for (size_t p = 0; p < B * C; ++p) {
            const T g = dy[p] / T(M);
            T* dst = dx.data() + p * M;
            for (size_t j = 0; j < M; ++j) dst[j] += g;
        }
    });
}

// ===== Dropout =====

// Inverted dropout: active only in training mode; identity (the same node)
// otherwise. Mask draws consume `rng` deterministically.
template <typename T>
Var<T> dropout(Var<T> x, double p, Rng& rng, bool train) {
    if (!train || p <= 0.0) return x;
    if (p >= 1.0) throw ConfigError("dropout probability must be < 1, got " + std::to_string(p));
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = t.val(x);
    auto mask = std::make_shared<Tensor<T>>(xv.shape());
    const T keep_scale = T(1.0 / (1.0 - p));
    for (size_t i = 0; i < mask->size(); ++i)
        (*mask)[i] = rng.uniform() < p ? T(0) : keep_scale;
    Tensor<T> y(xv.shape());
    simd::k_mul(xv.data(), mask->data(), y.data(), y.size());
    return t.node(std::move(y), t.needs_grad(x), [x, mask](Tape<T>& tp, Var<T> self) {
        if (!tp.needs_grad(x)) return;
        simd::k_fma(tp.grad(self).data(), mask->data(), tp.grad(x).data(), mask->size());
    });
}

// ===== Shape manipulation =====

namespace detail {
template <typename T>
Tensor<T> permute_raw(const Tensor<T>& x, const std::vector<size_t>& axes) {
    const size_t r = x.rank();
    typename Tensor<T>::Shape oshape(r);
    for (size_t i = 0; i < r; ++i) oshape[i] = x.shape(axes[i]);
    Tensor<T> y(oshape);
    std::vector<size_t> istrides(r, 1), map(r);
    for (size_t i = r - 1; i-- > 0;) istrides[i] = istrides[i + 1] * x.shape(i + 1);
    for (size_t i = 0; i < r; ++i) map[i] = istrides[axes[i]];
    std::vector<size_t> idx(r, 0);
    const size_t n = x.size();
    size_t src = 0;
    for (size_t o = 0; o < n; ++o) {
        y[o] = x[src];
        for (size_t i = r; i-- > 0;) {
            idx[i]++;
            src += map[i];
            if (idx[i] < y.shape(i)) break;
            src -= idx[i] * map[i];
            idx[i] = 0;
        }
    }
    return y;
}
}  // namespace detail

template <typename T>
Var<T> permute(Var<T> x, std::vector<size_t> axes) {
    Tape<T>& t = *x.tape;
    const size_t r = t.val(x).rank();
    std::vector<bool> seen(r, false);
    if (axes.size() != r) throw ShapeError("permute: axes count != rank");
    for (size_t a : axes) {
        if (a >= r || seen[a]) throw ShapeError("permute: invalid axes");
        seen[a] = true;
    }
    Tensor<T> y = detail::permute_raw(t.val(x), axes);
    return t.node(std::move(y), t.needs_grad(x), [x, axes](Tape<T>& tp, Var<T> self) {
        if (!tp.needs_grad(x)) return;
        std::vector<size_t> inv(axes.size());
        for (size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = i;
        tp.acc_grad(x, detail::permute_raw(tp.grad(self), inv));
    });
}

template <typename T>
Var<T> reshape(Var<T> x, typename Tensor<T>::Shape shape) {
    Tape<T>& t = *x.tape;
    Tensor<T> y = t.val(x).reshaped(std::move(shape));
    return t.node(std::move(y), t.needs_grad(x), [x](Tape<T>& tp, Var<T> self) {
        if (!tp.needs_grad(x)) return;
        tp.acc_grad(x, tp.grad(self).reshaped(tp.val(x).shape()));
    });
}

// Concatenation along `axis`; inputs must agree on every other axis.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Tape<T>& t = *parts[0].tape;
    const size_t r = t.val(parts[0]).rank();
    if (axis >= r) throw ShapeError("concat: axis out of range");
    typename Tensor<T>::Shape oshape = t.val(parts[0]).shape();
    size_t axis_total = 0;
    for (const auto& p : parts) {
        const Tensor<T>& pv = t.val(p);
        if (pv.rank() != r) throw ShapeError("concat: rank mismatch");
        for (size_t i = 0; i < r; ++i)
            if (i != axis && pv.shape(i) != oshape[i])
                throw ShapeError("concat: shape mismatch " + pv.shape_str() + " vs " +
                                 Tensor<T>::str(oshape));
        axis_total += pv.shape(axis);
    }
    oshape[axis] = axis_total;

    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= oshape[i];
    for (size_t i = axis + 1; i < r; ++i) inner *= oshape[i];

    Tensor<T> y(oshape);
    size_t off = 0;
    bool rg = false;
    for (const auto& p : parts) {
        const Tensor<T>& pv = t.val(p);
        const size_t blk = pv.shape(axis) * inner;
        for (size_t o = 0; o < outer; ++o)
            std::copy_n(pv.data() + o * blk, blk, y.data() + o * axis_total * inner + off);
        off += blk;
        rg = rg || t.needs_grad(p);
    }
    return t.node(std::move(y), rg,
                  [parts, outer, inner, axis, axis_total](Tape<T>& tp, Var<T> self) {
                      const Tensor<T>& dy = tp.grad(self);
                      size_t off = 0;
                      for (const auto& p : parts) {
                          const size_t blk = tp.val(p).shape(axis) * inner;
                          if (tp.needs_grad(p)) {
                              Tensor<T>& dp = tp.grad(p);
                              for (size_t o = 0; o < outer; ++o)
                                  simd::k_add(dp.data() + o * blk,
                                              dy.data() + o * axis_total * inner + off,
                                              dp.data() + o * blk, blk);
                          }
                          off += blk;
                      }
                  });
}

// Contiguous slice [from, to) along `axis`.
template <typename T>
Var<T> slice(Var<T> x, size_t axis, size_t from, size_t to) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = t.val(x);
    if (axis >= xv.rank() || from >= to || to > xv.shape(axis))
        throw ShapeError("slice: bad range [" + std::to_string(from) + "," + std::to_string(to) +
                         ") on axis " + std::to_string(axis) + " of " + xv.shape_str());
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= xv.shape(i);
    for (size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.shape(i);
    const size_t span = xv.shape(axis);
    typename Tensor<T>::Shape oshape = xv.shape();
    oshape[axis] = to - from;
    Tensor<T> y(oshape);
    const size_t blk = (to - from) * inner;
    for (size_t o = 0; o < outer; ++o)
        std::copy_n(xv.data() + (o * span + from) * inner, blk, y.data() + o * blk);
    return t.node(std::move(y), t.needs_grad(x),
                  [x, outer, inner, span, from, blk](Tape<T>& tp, Var<T> self) {
                      if (!tp.needs_grad(x)) return;
                      const Tensor<T>& dy = tp.grad(self);
                      Tensor<T>& dx = tp.grad(x);
                      for (size_t o = 0; o < outer; ++o)
                          simd::k_add(dx.data() + (o * span + from) * inner, dy.data() + o * blk,
                                      dx.data() + (o * span + from) * inner, blk);
                  });
}

// Row gather: y[i, :] = x[idx[i], :]. Backward scatter-adds, so repeated
// indices are handled correctly.
template <typename T>
Var<T> gather_rows(Var<T> x, std::shared_ptr<const std::vector<size_t>> idx) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = t.val(x);
    if (xv.rank() != 2) throw ShapeError("gather_rows: need rank-2, got " + xv.shape_str());
    const size_t R = xv.shape(0), C = xv.shape(1);
    Tensor<T> y({idx->size(), C});
    for (size_t i = 0; i < idx->size(); ++i) {
        const size_t src = (*idx)[i];
        if (src >= R) throw ShapeError("gather_rows: index " + std::to_string(src) + " out of range");
        std::copy_n(xv.data() + src * C, C, y.data() + i * C);
    }
    return t.node(std::move(y), t.needs_grad(x), [x, idx, C](Tape<T>& tp, Var<T> self) {
        if (!tp.needs_grad(x)) return;
        const Tensor<T>& dy = tp.grad(self);
        Tensor<T>& dx = tp.grad(x);
        for (size_t i = 0; i < idx->size(); ++i)
            simd::k_add(dx.data() + (*idx)[i] * C, dy.data() + i * C, dx.data() + (*idx)[i] * C, C);
    });
}

// ===== Fusion-specific =====

// v [B, G*D] with per-slot weights alpha [B, G]: y slot g = alpha[b,g] * v slot g.
template <typename T>
Var<T> slot_scale(Var<T> v, Var<T> alpha, size_t G) {
    Tape<T>& t = *v.tape;
    const Tensor<T>& vv = t.val(v);
    const Tensor<T>& av = t.val(alpha);
    if (vv.rank() != 2 || av.rank() != 2 || av.shape(1) != G || vv.shape(0) != av.shape(0) ||
        vv.shape(1) % G != 0)
        throw ShapeError("slot_scale: v " + vv.shape_str() + ", alpha " + av.shape_str() +
                         ", slots " + std::to_string(G));
    const size_t B = vv.shape(0), D = vv.shape(1) / G;
    Tensor<T> y(vv.shape());
    for (size_t b = 0; b < B; ++b)
        for (size_t g = 0; g < G; ++g)
            simd::k_scale(vv.data() + (b * G + g) * D, av.at(b, g), y.data() + (b * G + g) * D, D);
    const bool rg = t.needs_grad(v) || t.needs_grad(alpha);
    return t.node(std::move(y), rg, [v, alpha, B, G, D](Tape<T>& tp, Var<T> self) {
        const Tensor<T>& dy = tp.grad(self);
        for (size_t b = 0; b < B; ++b)
            for (size_t g = 0; g < G; ++g) {
                const size_t off = (b * G + g) * D;
                if (tp.needs_grad(v))
                    simd::k_axpy(tp.val(alpha).at(b, g), dy.data() + off,
                                 tp.grad(v).data() + off, D);
                if (tp.needs_grad(alpha))
                    tp.grad(alpha).at(b, g) +=
                        simd::k_dot(dy.data() + off, tp.val(v).data() + off, D);
            }
    });
}

// ===== Classification loss =====

// Per-row class-weighted cross-entropy with ignore label -1:
//   out[b] = w[y_b] * (logsumexp(z_b) - z_b[y_b]),   or exactly 0 when y_b < 0.
// Masked rows receive exactly zero gradient.
template <typename T>
Var<T> masked_weighted_ce(Var<T> logits, std::shared_ptr<const std::vector<int>> labels,
                          Tensor<T> weights) {
    Tape<T>& t = *logits.tape;
    const Tensor<T>& zv = t.val(logits);
    if (zv.rank() != 2) throw ShapeError("masked_weighted_ce: logits must be rank-2");
    const size_t B = zv.shape(0), K = zv.shape(1);
    if (labels->size() != B)
        throw ShapeError("masked_weighted_ce: " + std::to_string(labels->size()) +
                         " labels for batch " + std::to_string(B));
    if (weights.size() != K)
        throw ShapeError("masked_weighted_ce: weight count " + std::to_string(weights.size()) +
                         " vs classes " + std::to_string(K));
    Tensor<T> y({B});
    for (size_t b = 0; b < B; ++b) {
        const int lab = (*labels)[b];
        if (lab < 0) {
            y[b] = T(0);
            continue;
        }
        if (size_t(lab) >= K)
            throw DataError("class label " + std::to_string(lab) + " out of range for K=" +
                            std::to_string(K));
        const T* zr = zv.data() + b * K;
        T m = zr[0];
        for (size_t j = 1; j < K; ++j) m = std::max(m, zr[j]);
        T s = 0;
        for (size_t j = 0; j < K; ++j) s += std::exp(zr[j] - m);
        y[b] = weights[size_t(lab)] * (m + std::log(s) - zr[size_t(lab)]);
    }
    return t.node(std::move(y), t.needs_grad(logits),
                  [logits, labels, w = std::move(weights), B, K](Tape<T>& tp, Var<T> self) {
                      if (!tp.needs_grad(logits)) return;
                      const Tensor<T>& dy = tp.grad(self);
                      const Tensor<T>& zv2 = tp.val(logits);
                      Tensor<T>& dz = tp.grad(logits);
                      for (size_t b = 0; b < B; ++b) {
                          const int lab = (*labels)[b];
                          if (lab < 0) continue;
                          const T* zr = zv2.data() + b * K;
                          T m = zr[0];
                          for (size_t j = 1; j < K; ++j) m = std::max(m, zr[j]);
                          T s = 0;
                          for (size_t j = 0; j < K; ++j) s += std::exp(zr[j] - m);
                          const T g = dy[b] * w[size_t(lab)];
                          for (size_t j = 0; j < K; ++j) {
                              T p = std::exp(zr[j] - m) / s;
                              dz[b * K + j] += g * (p - (j == size_t(lab) ? T(1) : T(0)));
                          }
                      }
                  });
}

// ===== Selective-scan recurrence =====

// a [N] (negative diagonal), delta [L,d] (positive), Bm [L,N], Cm [L,N], x [L,d]
// -> y [L,d]. The full state trace is kept for the backward pass.
template <typename T>
Var<T> s6_scan(Var<T> a, Var<T> delta, Var<T> Bm, Var<T> Cm, Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = t.val(x);
    if (xv.rank() != 2) throw ShapeError("s6_scan: x must be [L,d], got " + xv.shape_str());
    const size_t L = xv.shape(0), d = xv.shape(1);
    const size_t N = t.val(a).size();
    check_same_shape(t.val(delta), xv, "s6_scan delta");
    if (t.val(Bm).rank() != 2 || t.val(Bm).shape(0) != L || t.val(Bm).shape(1) != N ||
        !t.val(Bm).same_shape(t.val(Cm)))
        throw ShapeError("s6_scan: B " + t.val(Bm).shape_str() + " / C " + t.val(Cm).shape_str() +
                         " must be [L,N] with N=" + std::to_string(N));

    auto h = std::make_shared<Tensor<T>>(typename Tensor<T>::Shape{L, d, N});
    Tensor<T> y({L, d});
    simd::k_s6_fwd(L, d, N, t.val(a).data(), t.val(delta).data(), t.val(Bm).data(),
                   t.val(Cm).data(), xv.data(), h->data(), y.data());
    const bool rg = t.needs_grad(a) || t.needs_grad(delta) || t.needs_grad(Bm) ||
                    t.needs_grad(Cm) || t.needs_grad(x);
    return t.node(std::move(y), rg, [a, delta, Bm, Cm, x, h, L, d, N](Tape<T>& tp, Var<T> self) {
        Tensor<T> da({N});
        Tensor<T> dd({L, d});
        Tensor<T> dB({L, N});
        Tensor<T> dC({L, N});
        Tensor<T> dx({L, d});
        simd::k_s6_bwd(L, d, N, tp.val(a).data(), tp.val(delta).data(), tp.val(Bm).data(),
                       tp.val(Cm).data(), tp.val(x).data(), h->data(), tp.grad(self).data(),
                       da.data(), dd.data(), dB.data(), dC.data(), dx.data());
        tp.acc_grad(a, da);
        tp.acc_grad(delta, dd);
        tp.acc_grad(Bm, dB);
        tp.acc_grad(Cm, dC);
        tp.acc_grad(x, dx);
    });
}

// ===== FFT causal convolution =====

// signal [L,C], kernel [L,C] -> per-channel causal convolution truncated to L:
//   y[t,c] = sum_{i<=t} kernel[i,c] * signal[t-i,c]
template <typename T>
Var<T> fft_convolve(Var<T> signal, Var<T> kernel) {
    Tape<T>& t = *signal.tape;
    const Tensor<T>& sv = t.val(signal);
    const Tensor<T>& kv = t.val(kernel);
    if (sv.rank() != 2 || !sv.same_shape(kv))
        throw ShapeError("fft_convolve: signal " + sv.shape_str() + " vs kernel " +
                         kv.shape_str());
    const size_t L = sv.shape(0), C = sv.shape(1);
    Tensor<T> y(sv.shape());
    for (size_t c = 0; c < C; ++c)
        fft::convolve(sv.data() + c, L, C, kv.data() + c, L, C, y.data() + c, L, C);
    const bool rg = t.needs_grad(signal) || t.needs_grad(kernel);
    return t.node(std::move(y), rg, [signal, kernel, L, C](Tape<T>& tp, Var<T> self) {
        const Tensor<T>& dy = tp.grad(self);
        // d/dsignal[i] = sum_{t>=i} dy[t] k[t-i]; d/dkernel[j] = sum_{t>=j} dy[t] s[t-j]
        if (tp.needs_grad(signal)) {
            Tensor<T> ds(tp.val(signal).shape());
            for (size_t c = 0; c < C; ++c)
                fft::correlate(dy.data() + c, L, C, tp.val(kernel).data() + c, L, C,
                               ds.data() + c, L, C);
            tp.acc_grad(signal, ds);
        }
        if (tp.needs_grad(kernel)) {
            Tensor<T> dk(tp.val(kernel).shape());
            for (size_t c = 0; c < C; ++c)
                fft::correlate(dy.data() + c, L, C, tp.val(signal).data() + c, L, C,
                               dk.data() + c, L, C);
            tp.acc_grad(kernel, dk);
        }
    });
}

}  // namespace vsmk::ops
