#include "dmg/detail/scalar_kernels.hpp"
#include "dmg/simd.hpp"

// Scalar reference table: the f32 instantiation of the templated kernels.
// This TU is built without FMA, so a*b+c stays mul-then-add and the
// element-wise entries are bit-comparable with the AVX2 variants.

namespace dmg::simd {

namespace {

const Kernels kScalar = {
    "scalar",
    detail::gemm_nn<f32>,
    detail::transpose<f32>,
    detail::add<f32>,
    detail::sub<f32>,
    detail::mul<f32>,
    detail::axpy<f32>,
    detail::scale<f32>,
    detail::sum<f32>,
    detail::dot<f32>,
    detail::softmax_row<f32>,
    detail::layernorm_row<f32>,
    detail::adamw<f32>,
    detail::gelu_fwd,
    detail::gelu_bwd,
};

} // namespace

const Kernels& scalar_kernels() { return kScalar; }

} // namespace dmg::simd
