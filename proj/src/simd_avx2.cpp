// AVX2/FMA kernel variants. This TU is the only one compiled with
// -mavx2 -mfma; it must not be entered on CPUs without AVX2 (the dispatcher
// guards that).
//
// Element-wise entries mirror the scalar reference operation-for-operation
// (mul+add, no FMA contraction, IEEE sqrt/div) and are bit-exact against it.
// GEMM and the reductions use 8-lane FMA accumulation and are
// tolerance-equivalent only.

#include "dmg/simd.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>

#include "dmg/detail/scalar_kernels.hpp"
#include "dmg/thread_pool.hpp"

namespace dmg::simd {

namespace {

inline f32 hsum8(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    __m128 s = _mm_add_ps(lo, hi);
    s = _mm_add_ps(s, _mm_movehl_ps(s, s));
    s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
    return _mm_cvtss_f32(s);
}

// 16-column panel over ROWS rows of A; acc entirely in ymm registers.
template <int ROWS>
inline void micro_16(int k, const f32* a, int lda, const f32* b, int ldb, f32* c, int ldc,
                     bool accumulate) {
    __m256 acc0[ROWS], acc1[ROWS];
    for (int r = 0; r < ROWS; ++r) {
        if (accumulate) {
            acc0[r] = _mm256_loadu_ps(c + static_cast<int64_t>(r) * ldc);
            acc1[r] = _mm256_loadu_ps(c + static_cast<int64_t>(r) * ldc + 8);
        } else {
            acc0[r] = _mm256_setzero_ps();
            acc1[r] = _mm256_setzero_ps();
        }
    }
    for (int kk = 0; kk < k; ++kk) {
        const f32* bk = b + static_cast<int64_t>(kk) * ldb;
        __m256 b0 = _mm256_loadu_ps(bk);
        __m256 b1 = _mm256_loadu_ps(bk + 8);
        for (int r = 0; r < ROWS; ++r) {
            __m256 av = _mm256_broadcast_ss(a + static_cast<int64_t>(r) * lda + kk);
            acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
            acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
        }
    }
    for (int r = 0; r < ROWS; ++r) {
        _mm256_storeu_ps(c + static_cast<int64_t>(r) * ldc, acc0[r]);
        _mm256_storeu_ps(c + static_cast<int64_t>(r) * ldc + 8, acc1[r]);
    }
}

template <int ROWS>
inline void micro_8(int k, const f32* a, int lda, const f32* b, int ldb, f32* c, int ldc,
                    bool accumulate) {
    __m256 acc[ROWS];
    for (int r = 0; r < ROWS; ++r)
        acc[r] = accumulate ? _mm256_loadu_ps(c + static_cast<int64_t>(r) * ldc) : _mm256_setzero_ps();
    for (int kk = 0; kk < k; ++kk) {
        __m256 b0 = _mm256_loadu_ps(b + static_cast<int64_t>(kk) * ldb);
        for (int r = 0; r < ROWS; ++r) {
            __m256 av = _mm256_broadcast_ss(a + static_cast<int64_t>(r) * lda + kk);
            acc[r] = _mm256_fmadd_ps(av, b0, acc[r]);
        }
    }
    for (int r = 0; r < ROWS; ++r) _mm256_storeu_ps(c + static_cast<int64_t>(r) * ldc, acc[r]);
}

void gemm_rows(int r0, int r1, int n, int k, const f32* a, int lda, const f32* b, int ldb, f32* c,
               int ldc, bool accumulate) {
    int j = 0;
    for (; j + 16 <= n; j += 16) {
        int i = r0;
        for (; i + 6 <= r1; i += 6)
            micro_16<6>(k, a + static_cast<int64_t>(i) * lda, lda, b + j, ldb,
                        c + static_cast<int64_t>(i) * ldc + j, ldc, accumulate);
        for (; i < r1; ++i)
            micro_16<1>(k, a + static_cast<int64_t>(i) * lda, lda, b + j, ldb,
                        c + static_cast<int64_t>(i) * ldc + j, ldc, accumulate);
    }
    for (; j + 8 <= n; j += 8) {
        int i = r0;
        for (; i + 4 <= r1; i += 4)
            micro_8<4>(k, a + static_cast<int64_t>(i) * lda, lda, b + j, ldb,
                       c + static_cast<int64_t>(i) * ldc + j, ldc, accumulate);
        for (; i < r1; ++i)
            micro_8<1>(k, a + static_cast<int64_t>(i) * lda, lda, b + j, ldb,
                       c + static_cast<int64_t>(i) * ldc + j, ldc, accumulate);
    }
    if (j < n) {
        // Narrow column tail, FMA accumulation per element.
        for (int i = r0; i < r1; ++i) {
            const f32* ai = a + static_cast<int64_t>(i) * lda;
            f32* ci = c + static_cast<int64_t>(i) * ldc;
            for (int jj = j; jj < n; ++jj) {
                f32 s = accumulate ? ci[jj] : 0.0f;
                for (int kk = 0; kk < k; ++kk) s = std::fma(ai[kk], b[static_cast<int64_t>(kk) * ldb + jj], s);
                ci[jj] = s;
            }
        }
    }
}

void gemm_nn_avx2(int m, int n, int k, const f32* a, int lda, const f32* b, int ldb, f32* c,
                  int ldc, bool accumulate) {
    // below this size the pool handoff costs more than the math
    if (static_cast<int64_t>(m) * n * k <= (int64_t{1} << 19)) {
        gemm_rows(0, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
        return;
    }
    parallel_for(m, [&](int64_t i0, int64_t i1) {
        gemm_rows(static_cast<int>(i0), static_cast<int>(i1), n, k, a, lda, b, ldb, c, ldc,
                  accumulate);
    });
}

void transpose_avx2(int rows, int cols, const f32* in, f32* out) {
    // 8x8 blocked; moves only, so exact regardless of path.
    int r = 0;
    for (; r + 8 <= rows; r += 8) {
        int c = 0;
        for (; c + 8 <= cols; c += 8) {
            __m256 row[8];
            for (int i = 0; i < 8; ++i)
                row[i] = _mm256_loadu_ps(in + static_cast<int64_t>(r + i) * cols + c);
            __m256 t0 = _mm256_unpacklo_ps(row[0], row[1]);
            __m256 t1 = _mm256_unpackhi_ps(row[0], row[1]);
            __m256 t2 = _mm256_unpacklo_ps(row[2], row[3]);
            __m256 t3 = _mm256_unpackhi_ps(row[2], row[3]);
            __m256 t4 = _mm256_unpacklo_ps(row[4], row[5]);
            __m256 t5 = _mm256_unpackhi_ps(row[4], row[5]);
            __m256 t6 = _mm256_unpacklo_ps(row[6], row[7]);
            __m256 t7 = _mm256_unpackhi_ps(row[6], row[7]);
            __m256 s0 = _mm256_shuffle_ps(t0, t2, _MM_SHUFFLE(1, 0, 1, 0));
            __m256 s1 = _mm256_shuffle_ps(t0, t2, _MM_SHUFFLE(3, 2, 3, 2));
            __m256 s2 = _mm256_shuffle_ps(t1, t3, _MM_SHUFFLE(1, 0, 1, 0));
            __m256 s3 = _mm256_shuffle_ps(t1, t3, _MM_SHUFFLE(3, 2, 3, 2));
            __m256 s4 = _mm256_shuffle_ps(t4, t6, _MM_SHUFFLE(1, 0, 1, 0));
            __m256 s5 = _mm256_shuffle_ps(t4, t6, _MM_SHUFFLE(3, 2, 3, 2));
            __m256 s6 = _mm256_shuffle_ps(t5, t7, _MM_SHUFFLE(1, 0, 1, 0));
            __m256 s7 = _mm256_shuffle_ps(t5, t7, _MM_SHUFFLE(3, 2, 3, 2));
            row[0] = _mm256_permute2f128_ps(s0, s4, 0x20);
            row[1] = _mm256_permute2f128_ps(s1, s5, 0x20);
            row[2] = _mm256_permute2f128_ps(s2, s6, 0x20);
            row[3] = _mm256_permute2f128_ps(s3, s7, 0x20);
            row[4] = _mm256_permute2f128_ps(s0, s4, 0x31);
            row[5] = _mm256_permute2f128_ps(s1, s5, 0x31);
            row[6] = _mm256_permute2f128_ps(s2, s6, 0x31);
            row[7] = _mm256_permute2f128_ps(s3, s7, 0x31);
            for (int i = 0; i < 8; ++i)
                _mm256_storeu_ps(out + static_cast<int64_t>(c + i) * rows + r, row[i]);
        }
        for (; c < cols; ++c)
            for (int i = 0; i < 8; ++i)
                out[static_cast<int64_t>(c) * rows + r + i] = in[static_cast<int64_t>(r + i) * cols + c];
    }
    for (; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            out[static_cast<int64_t>(c) * rows + r] = in[static_cast<int64_t>(r) * cols + c];
}

void add_avx2(int64_t n, const f32* a, const f32* b, f32* y) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] + b[i];
}
void sub_avx2(int64_t n, const f32* a, const f32* b, f32* y) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] - b[i];
}
void mul_avx2(int64_t n, const f32* a, const f32* b, f32* y) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] * b[i];
}
void axpy_avx2(int64_t n, f32 alpha, const f32* x, f32* y) {
    // mul+add, not FMA: bit-parity with the scalar reference.
    __m256 av = _mm256_set1_ps(alpha);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(
            y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_mul_ps(av, _mm256_loadu_ps(x + i))));
    for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}
void scale_avx2(int64_t n, f32 alpha, const f32* x, f32* y) {
    __m256 av = _mm256_set1_ps(alpha);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) y[i] = alpha * x[i];
}

f32 sum_avx2(int64_t n, const f32* x) {
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    f32 s = hsum8(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

f32 dot_avx2(int64_t n, const f32* a, const f32* b) {
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
    f32 s = hsum8(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

f32 max_avx2(int n, const f32* x) {
    f32 mx = x[0];
    int i = 0;
    if (n >= 8) {
        __m256 acc = _mm256_loadu_ps(x);
        for (i = 8; i + 8 <= n; i += 8) acc = _mm256_max_ps(acc, _mm256_loadu_ps(x + i));
        __m128 m4 = _mm_max_ps(_mm256_castps256_ps128(acc), _mm256_extractf128_ps(acc, 1));
        m4 = _mm_max_ps(m4, _mm_movehl_ps(m4, m4));
        m4 = _mm_max_ss(m4, _mm_shuffle_ps(m4, m4, 1));
        mx = _mm_cvtss_f32(m4);
    }
    for (; i < n; ++i) mx = x[i] > mx ? x[i] : mx;
    return mx;
}

void softmax_row_avx2(int n, const f32* x, f32* y) {
    f32 mx = max_avx2(n, x);
    f32 s = 0.0f;
    for (int i = 0; i < n; ++i) { // exp stays scalar libm in both variants
        y[i] = std::exp(x[i] - mx);
        s += y[i];
    }
    __m256 sv = _mm256_set1_ps(s);
    int i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_div_ps(_mm256_loadu_ps(y + i), sv));
    for (; i < n; ++i) y[i] = y[i] / s;
}

void layernorm_row_avx2(int n, const f32* x, const f32* gamma, const f32* beta, f32 eps, f32* y,
                        f32* save_mean, f32* save_rstd) {
    f32 mean = sum_avx2(n, x) / static_cast<f32>(n);
    __m256 mv = _mm256_set1_ps(mean);
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 d = _mm256_sub_ps(_mm256_loadu_ps(x + i), mv);
        acc = _mm256_fmadd_ps(d, d, acc);
    }
    f32 var = hsum8(acc);
    for (; i < n; ++i) {
        f32 d = x[i] - mean;
        var += d * d;
    }
    var /= static_cast<f32>(n);
    f32 rstd = 1.0f / std::sqrt(var + eps);
    __m256 rv = _mm256_set1_ps(rstd);
    i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 norm = _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(x + i), mv), rv);
        __m256 out = _mm256_add_ps(_mm256_mul_ps(norm, _mm256_loadu_ps(gamma + i)),
                                   _mm256_loadu_ps(beta + i));
        _mm256_storeu_ps(y + i, out);
    }
    for (; i < n; ++i) y[i] = (x[i] - mean) * rstd * gamma[i] + beta[i];
    *save_mean = mean;
    *save_rstd = rstd;
}

// mirrors detail::fast_exp operation-for-operation (mul/add only, floor,
// exponent-bit construction) so the gelu kernels stay bit-exact vs scalar
inline __m256 fast_exp8(__m256 x) {
    x = _mm256_min_ps(_mm256_max_ps(x, _mm256_set1_ps(-87.0f)), _mm256_set1_ps(88.0f));
    __m256 z = _mm256_mul_ps(x, _mm256_set1_ps(1.44269504088896341f));
    __m256 zi = _mm256_floor_ps(z);
    __m256 f = _mm256_sub_ps(z, zi);
    __m256 p = _mm256_set1_ps(1.52527338040598e-5f);
    p = _mm256_add_ps(_mm256_mul_ps(p, f), _mm256_set1_ps(1.54035303933816e-4f));
    p = _mm256_add_ps(_mm256_mul_ps(p, f), _mm256_set1_ps(0.00133335581464284f));
    p = _mm256_add_ps(_mm256_mul_ps(p, f), _mm256_set1_ps(0.00961812910762848f));
    p = _mm256_add_ps(_mm256_mul_ps(p, f), _mm256_set1_ps(0.0555041086648216f));
    p = _mm256_add_ps(_mm256_mul_ps(p, f), _mm256_set1_ps(0.240226506959101f));
    p = _mm256_add_ps(_mm256_mul_ps(p, f), _mm256_set1_ps(0.693147180559945f));
    p = _mm256_add_ps(_mm256_mul_ps(p, f), _mm256_set1_ps(1.0f));
    __m256i ei = _mm256_cvtps_epi32(zi);
    __m256i bits = _mm256_slli_epi32(_mm256_add_epi32(ei, _mm256_set1_epi32(127)), 23);
    return _mm256_mul_ps(p, _mm256_castsi256_ps(bits));
}

inline __m256 fast_tanh8(__m256 x) {
    const __m256 sign_mask = _mm256_set1_ps(-0.0f);
    __m256 a = _mm256_andnot_ps(sign_mask, x);
    __m256 e = fast_exp8(_mm256_mul_ps(_mm256_set1_ps(-2.0f), a));
    __m256 one = _mm256_set1_ps(1.0f);
    __m256 t = _mm256_div_ps(_mm256_sub_ps(one, e), _mm256_add_ps(one, e));
    return _mm256_or_ps(t, _mm256_and_ps(sign_mask, x));
}

void gelu_fwd_avx2(int64_t n, const f32* x, f32* y, f32* tanh_save) {
    const __m256 c = _mm256_set1_ps(0.7978845608028654f);
    const __m256 q = _mm256_set1_ps(0.044715f);
    const __m256 half = _mm256_set1_ps(0.5f);
    const __m256 one = _mm256_set1_ps(1.0f);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 xv = _mm256_loadu_ps(x + i);
        __m256 x2 = _mm256_mul_ps(xv, xv);
        __m256 x3 = _mm256_mul_ps(x2, xv);
        __m256 u = _mm256_mul_ps(c, _mm256_add_ps(xv, _mm256_mul_ps(q, x3)));
        __m256 th = fast_tanh8(u);
        _mm256_storeu_ps(tanh_save + i, th);
        _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_mul_ps(half, xv), _mm256_add_ps(one, th)));
    }
    if (i < n) detail::gelu_fwd(n - i, x + i, y + i, tanh_save + i);
}

void gelu_bwd_avx2(int64_t n, const f32* g, const f32* x, const f32* tanh_save, f32* ga) {
    const __m256 c = _mm256_set1_ps(0.7978845608028654f);
    const __m256 q3 = _mm256_set1_ps(3.0f * 0.044715f);
    const __m256 half = _mm256_set1_ps(0.5f);
    const __m256 one = _mm256_set1_ps(1.0f);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 th = _mm256_loadu_ps(tanh_save + i);
        __m256 sech2 = _mm256_sub_ps(one, _mm256_mul_ps(th, th));
        __m256 xv = _mm256_loadu_ps(x + i);
        __m256 x2 = _mm256_mul_ps(xv, xv);
        __m256 inner = _mm256_add_ps(one, _mm256_mul_ps(q3, x2));
        // association mirrors the scalar reference exactly
        __m256 second =
            _mm256_mul_ps(_mm256_mul_ps(_mm256_mul_ps(_mm256_mul_ps(half, xv), sech2), c), inner);
        __m256 d = _mm256_add_ps(_mm256_mul_ps(half, _mm256_add_ps(one, th)), second);
        __m256 acc = _mm256_add_ps(_mm256_loadu_ps(ga + i), _mm256_mul_ps(_mm256_loadu_ps(g + i), d));
        _mm256_storeu_ps(ga + i, acc);
    }
    if (i < n) detail::gelu_bwd(n - i, g + i, x + i, tanh_save + i, ga + i);
}

void adamw_avx2(int64_t n, f32* w, f32* m, f32* v, const f32* g, f32 lr, f32 beta1, f32 beta2,
                f32 eps, f32 weight_decay, f32 bias_corr1, f32 bias_corr2) {
    // Mirrors the scalar update exactly: mul/add/div/sqrt only.
    __m256 b1 = _mm256_set1_ps(beta1), ob1 = _mm256_set1_ps(1.0f - beta1);
    __m256 b2 = _mm256_set1_ps(beta2), ob2 = _mm256_set1_ps(1.0f - beta2);
    __m256 bc1 = _mm256_set1_ps(bias_corr1), bc2 = _mm256_set1_ps(bias_corr2);
    __m256 ev = _mm256_set1_ps(eps), lrv = _mm256_set1_ps(lr), wdv = _mm256_set1_ps(weight_decay);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 gi = _mm256_loadu_ps(g + i);
        __m256 mi = _mm256_add_ps(_mm256_mul_ps(b1, _mm256_loadu_ps(m + i)), _mm256_mul_ps(ob1, gi));
        __m256 vi = _mm256_add_ps(_mm256_mul_ps(b2, _mm256_loadu_ps(v + i)),
                                  _mm256_mul_ps(ob2, _mm256_mul_ps(gi, gi)));
        _mm256_storeu_ps(m + i, mi);
        _mm256_storeu_ps(v + i, vi);
        __m256 mhat = _mm256_div_ps(mi, bc1);
        __m256 vhat = _mm256_div_ps(vi, bc2);
        __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), ev);
        __m256 wi = _mm256_loadu_ps(w + i);
        __m256 upd = _mm256_add_ps(_mm256_div_ps(mhat, denom), _mm256_mul_ps(wdv, wi));
        _mm256_storeu_ps(w + i, _mm256_sub_ps(wi, _mm256_mul_ps(lrv, upd)));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0f - beta2) * (g[i] * g[i]);
        f32 mhat = m[i] / bias_corr1;
        f32 vhat = v[i] / bias_corr2;
        w[i] = w[i] - lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[i]);
    }
}

const Kernels kAvx2 = {
    "avx2",          gemm_nn_avx2, transpose_avx2, add_avx2,  sub_avx2,
    mul_avx2,        axpy_avx2,    scale_avx2,     sum_avx2,  dot_avx2,
    softmax_row_avx2, layernorm_row_avx2, adamw_avx2, gelu_fwd_avx2, gelu_bwd_avx2,
};

} // namespace

const Kernels& avx2_kernels() { return kAvx2; }

} // namespace dmg::simd

#else // !(__AVX2__ && __FMA__)

namespace dmg::simd {
// Built without AVX2 support; the dispatcher never selects this table.
const Kernels& avx2_kernels() { return scalar_kernels(); }
} // namespace dmg::simd

#endif
