#pragma once

#include <cstddef>
#include <string>

// Vectorizable inner loops live behind a runtime-selected dispatch table.
// Every entry has a scalar reference implementation; the AVX2 table overrides
// the float kernels on CPUs with AVX2+FMA. Double-precision kernels are always
// scalar: they serve reference/verification paths where exactness matters more
// than speed. Scalar and AVX2 variants are equivalence-tested against each
// other (see tests/test_kernels.cpp).

namespace vsmk::simd {

enum class Backend { Auto, Scalar, Avx2 };

struct KernelTable {
    const char* name;

    // y = a + b ; y = a - b ; y = a * b (elementwise, length n)
    void (*vadd_f32)(const float*, const float*, float*, size_t);
    void (*vsub_f32)(const float*, const float*, float*, size_t);
    void (*vmul_f32)(const float*, const float*, float*, size_t);
    // y = s * x
    void (*vscale_f32)(const float*, float, float*, size_t);
    // y += s * x
    void (*vaxpy_f32)(float, const float*, float*, size_t);
    // y += a * b (elementwise)
    void (*vfma_f32)(const float*, const float*, float*, size_t);
    void (*vrelu_f32)(const float*, float*, size_t);
    // dx += dy where x > 0
    void (*vrelu_bwd_f32)(const float*, const float*, float*, size_t);
    float (*vdot_f32)(const float*, const float*, size_t);
    float (*vsum_f32)(const float*, size_t);

    // Row-major C[m,n] (+)= A[m,k] * B[k,n]; accumulate=false overwrites C.
    void (*gemm_f32)(size_t m, size_t n, size_t k, const float* a, const float* b,
                     float* c, bool accumulate);

    // Fused decoupled-weight-decay Adam step on one parameter tensor:
    // moment updates, bias-corrected adaptive step, then p *= (1 - lr*wd).
    void (*adamw_f32)(float* p, const float* g, float* m, float* v, size_t n,
                      float lr, float beta1, float beta2, float eps, float wd,
                      float bc1, float bc2);

    // Input-dependent (selective) state-space recurrence over one sequence.
    //   a[N]           diagonal continuous-time state matrix, strictly negative
    //   delta[L*d]     positive per-step, per-channel step sizes
    //   Bm[L*N] Cm[L*N] per-step input/output mixing vectors
    //   x[L*d]         input sequence
    // Each channel carries its own length-N state. Zero-order-hold step:
    //   abar = exp(delta*a),  bbar = (exp(delta*a)-1)/a * B
    //   h[t] = abar*h[t-1] + bbar*x[t],  y[t,c] = sum_n C[t,n]*h[t,c,n]
    // Writes the full state trace h[L*d*N] (consumed by the backward pass) and y[L*d].
    void (*s6_fwd_f32)(size_t L, size_t d, size_t N, const float* a, const float* delta,
                       const float* Bm, const float* Cm, const float* x, float* h, float* y);

    // Reverse-mode companion of s6_fwd. Accumulates parameter/input gradients;
    // output buffers must be zeroed (or hold prior accumulations).
    void (*s6_bwd_f32)(size_t L, size_t d, size_t N, const float* a, const float* delta,
                       const float* Bm, const float* Cm, const float* x, const float* h,
                       const float* dy, float* da, float* ddelta, float* dB, float* dC,
                       float* dx);

    // Double-precision counterparts (scalar in every backend).
    void (*vadd_f64)(const double*, const double*, double*, size_t);
    void (*vsub_f64)(const double*, const double*, double*, size_t);
    void (*vmul_f64)(const double*, const double*, double*, size_t);
    void (*vscale_f64)(const double*, double, double*, size_t);
    void (*vaxpy_f64)(double, const double*, double*, size_t);
    void (*vfma_f64)(const double*, const double*, double*, size_t);
    void (*vrelu_f64)(const double*, double*, size_t);
    void (*vrelu_bwd_f64)(const double*, const double*, double*, size_t);
    double (*vdot_f64)(const double*, const double*, size_t);
    double (*vsum_f64)(const double*, size_t);
    void (*gemm_f64)(size_t, size_t, size_t, const double*, const double*, double*, bool);
    void (*adamw_f64)(double*, const double*, double*, double*, size_t, double, double,
                      double, double, double, double, double);
    void (*s6_fwd_f64)(size_t, size_t, size_t, const double*, const double*, const double*,
                       const double*, const double*, double*, double*);
    void (*s6_bwd_f64)(size_t, size_t, size_t, const double*, const double*, const double*,
                       const double*, const double*, const double*, const double*, double*,
                       double*, double*, double*, double*);
};

// True when the running CPU supports AVX2 and FMA.
bool avx2_supported();

// Select the kernel backend. Auto picks AVX2 when supported. Throws
// ConfigError if an unsupported backend is requested explicitly.
void set_backend(Backend b);
Backend backend();
Backend parse_backend(const std::string& name);

// Active dispatch table.
const KernelTable& kernels();

// Exposed for equivalence tests.
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in or unsupported

}  // namespace vsmk::simd
