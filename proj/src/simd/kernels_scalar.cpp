#include "vsmk/simd/kernels.hpp"

#include "scalar_impl.hpp"

namespace vsmk::simd {

const KernelTable& scalar_table() {
    static const KernelTable t = {
        "scalar",
        &scalar::vadd<float>,
        &scalar::vsub<float>,
        &scalar::vmul<float>,
        &scalar::vscale<float>,
        &scalar::vaxpy<float>,
        &scalar::vfma<float>,
        &scalar::vrelu<float>,
        &scalar::vrelu_bwd<float>,
        &scalar::vdot<float>,
        &scalar::vsum<float>,
        &scalar::gemm<float>,
        &scalar::adamw<float>,
        &scalar::s6_fwd<float>,
        &scalar::s6_bwd<float>,
        &scalar::vadd<double>,
        &scalar::vsub<double>,
        &scalar::vmul<double>,
        &scalar::vscale<double>,
        &scalar::vaxpy<double>,
        &scalar::vfma<double>,
        &scalar::vrelu<double>,
        &scalar::vrelu_bwd<double>,
        &scalar::vdot<double>,
        &scalar::vsum<double>,
        &scalar::gemm<double>,
        &scalar::adamw<double>,
        &scalar::s6_fwd<double>,
        &scalar::s6_bwd<double>,
    };
    return t;
}

}  // namespace vsmk::simd
