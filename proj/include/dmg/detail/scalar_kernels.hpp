#pragma once

#include <cmath>
#include <cstdint>

#include "dmg/common.hpp"
#include "dmg/detail/fast_math.hpp"
#include "dmg/thread_pool.hpp"

// Templated scalar kernels. The f32 instantiation is the reference side of
// the SIMD equivalence tests; the f64 instantiation backs gradient checks.
// Accumulation order is strictly sequential in k.

namespace dmg::detail {

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
             bool accumulate) {
    auto body = [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i) {
            const T* ai = a + i * lda;
            T* ci = c + i * ldc;
            if (!accumulate)
                for (int j = 0; j < n; ++j) ci[j] = T(0);
            for (int kk = 0; kk < k; ++kk) {
                T av = ai[kk];
                const T* bk = b + static_cast<int64_t>(kk) * ldb;
                for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
            }
        }
    };
    // below this size the pool handoff costs more than the math
    if (static_cast<int64_t>(m) * n * k <= (int64_t{1} << 19))
        body(0, m);
    else
        parallel_for(m, body);
}

template <typename T>
void transpose(int rows, int cols, const T* in, T* out) {
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            out[static_cast<int64_t>(c) * rows + r] = in[static_cast<int64_t>(r) * cols + c];
}

template <typename T>
void add(int64_t n, const T* a, const T* b, T* y) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
template <typename T>
void sub(int64_t n, const T* a, const T* b, T* y) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}
template <typename T>
void mul(int64_t n, const T* a, const T* b, T* y) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
template <typename T>
void axpy(int64_t n, T alpha, const T* x, T* y) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
template <typename T>
void scale(int64_t n, T alpha, const T* x, T* y) {
    for (int64_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}

template <typename T>
T sum(int64_t n, const T* x) {
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) s += x[i];
    return s;
}

template <typename T>
T dot(int64_t n, const T* a, const T* b) {
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
void softmax_row(int n, const T* x, T* y) {
    T mx = x[0];
    for (int i = 1; i < n; ++i) mx = x[i] > mx ? x[i] : mx;
    T s = T(0);
    for (int i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - mx);
        s += y[i];
    }
    for (int i = 0; i < n; ++i) y[i] = y[i] / s;
}

template <typename T>
void layernorm_row(int n, const T* x, const T* gamma, const T* beta, T eps, T* y, T* save_mean,
                   T* save_rstd) {
    T mean = T(0);
    for (int i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (int i = 0; i < n; ++i) {
        T d = x[i] - mean;
        var += d * d;
    }
    var /= static_cast<T>(n);
    T rstd = T(1) / std::sqrt(var + eps);
    for (int i = 0; i < n; ++i) y[i] = (x[i] - mean) * rstd * gamma[i] + beta[i];
    *save_mean = mean;
    *save_rstd = rstd;
}

// gelu kernels are f32-only (the f64 tape path keeps libm tanh). Operation
// order here is the reference the AVX2 variant reproduces bit-for-bit.
inline void gelu_fwd(int64_t n, const f32* x, f32* y, f32* tanh_save) {
    constexpr f32 c = 0.7978845608028654f; // sqrt(2/pi)
    constexpr f32 q = 0.044715f;
    for (int64_t i = 0; i < n; ++i) {
        f32 x2 = x[i] * x[i];
        f32 x3 = x2 * x[i];
        f32 u = c * (x[i] + q * x3);
        f32 th = fast_tanh(u);
        tanh_save[i] = th;
        y[i] = 0.5f * x[i] * (1.0f + th);
    }
}

inline void gelu_bwd(int64_t n, const f32* g, const f32* x, const f32* tanh_save, f32* ga) {
    constexpr f32 c = 0.7978845608028654f;
    constexpr f32 q = 0.044715f;
    for (int64_t i = 0; i < n; ++i) {
        f32 th = tanh_save[i];
        f32 sech2 = 1.0f - th * th;
        f32 x2 = x[i] * x[i];
        f32 second = 0.5f * x[i] * sech2 * c * (1.0f + 3.0f * q * x2);
        f32 d = 0.5f * (1.0f + th) + second;
        ga[i] = ga[i] + g[i] * d;
    }
}

template <typename T>
void adamw(int64_t n, T* w, T* m, T* v, const T* g, T lr, T beta1, T beta2, T eps, T weight_decay,
           T bias_corr1, T bias_corr2) {
    for (int64_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * (g[i] * g[i]);
        T mhat = m[i] / bias_corr1;
        T vhat = v[i] / bias_corr2;
        w[i] = w[i] - lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[i]);
    }
}

} // namespace dmg::detail
