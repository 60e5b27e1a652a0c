#pragma once

#include <string>

#include "dmg/common.hpp"

namespace dmg::simd {

// f32 compute kernels behind the tensor ops. One scalar reference
// implementation and one AVX2 implementation exist for each entry; the
// active table is picked once at startup from CPUID (override with
// DMG_SIMD=scalar|avx2).
//
// Equivalence contract, enforced by tests/test_kernels.cpp:
//   - pure element-wise entries (add..adamw) are bit-exact across variants
//     (no FMA contraction, IEEE sqrt/div only);
//   - reduction-carrying entries (gemm_nn, sum, dot, softmax_row,
//     layernorm_row) may reassociate and are tolerance-tested against an
//     f64 reference.
struct Kernels {
    const char* name;

    // C[M,N] (+)= A[M,K] @ B[K,N], row-major with leading dimensions.
    void (*gemm_nn)(int m, int n, int k, const f32* a, int lda, const f32* b, int ldb, f32* c,
                    int ldc, bool accumulate);
    // out[c*rows + r] = in[r*cols + c]
    void (*transpose)(int rows, int cols, const f32* in, f32* out);

    void (*add)(int64_t n, const f32* a, const f32* b, f32* y);
    void (*sub)(int64_t n, const f32* a, const f32* b, f32* y);
    void (*mul)(int64_t n, const f32* a, const f32* b, f32* y);
    void (*axpy)(int64_t n, f32 alpha, const f32* x, f32* y); // y += alpha * x
    void (*scale)(int64_t n, f32 alpha, const f32* x, f32* y); // y = alpha * x

    f32 (*sum)(int64_t n, const f32* x);
    f32 (*dot)(int64_t n, const f32* a, const f32* b);

    void (*softmax_row)(int n, const f32* x, f32* y);
    // y = (x - mean) * rstd * gamma + beta; mean/rstd saved for backward.
    void (*layernorm_row)(int n, const f32* x, const f32* gamma, const f32* beta, f32 eps, f32* y,
                          f32* save_mean, f32* save_rstd);

    // Decoupled weight decay update, bias corrections precomputed.
    void (*adamw)(int64_t n, f32* w, f32* m, f32* v, const f32* g, f32 lr, f32 beta1, f32 beta2,
                  f32 eps, f32 weight_decay, f32 bias_corr1, f32 bias_corr2);

    // tanh-form gelu; the tanh values are saved for the backward pass.
    void (*gelu_fwd)(int64_t n, const f32* x, f32* y, f32* tanh_save);
    void (*gelu_bwd)(int64_t n, const f32* g, const f32* x, const f32* tanh_save, f32* ga);
};

bool cpu_has_avx2();

const Kernels& scalar_kernels();
const Kernels& avx2_kernels(); // only valid to call through when cpu_has_avx2()

// Active table (selected once, stable for the process lifetime).
const Kernels& active();

std::string active_name();

} // namespace dmg::simd
