#include "dmg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dmg/detail/fast_math.hpp"
#include "dmg/detail/scalar_kernels.hpp"
#include "dmg/simd.hpp"

namespace dmg {

namespace {

// Kernel dispatch: f32 goes through the runtime-selected SIMD table, f64
// always uses the scalar reference.
template <typename T>
void k_gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
            bool acc) {
    if constexpr (std::is_same_v<T, f32>)
        simd::active().gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, acc);
    else
        detail::gemm_nn<T>(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
template <typename T>
void k_transpose(int r, int c, const T* in, T* out) {
    if constexpr (std::is_same_v<T, f32>)
        simd::active().transpose(r, c, in, out);
    else
        detail::transpose<T>(r, c, in, out);
}
template <typename T>
void k_add(int64_t n, const T* a, const T* b, T* y) {
    if constexpr (std::is_same_v<T, f32>)
        simd::active().add(n, a, b, y);
    else
        detail::add<T>(n, a, b, y);
}
template <typename T>
void k_sub(int64_t n, const T* a, const T* b, T* y) {
    if constexpr (std::is_same_v<T, f32>)
        simd::active().sub(n, a, b, y);
    else
        detail::sub<T>(n, a, b, y);
}
template <typename T>
void k_mul(int64_t n, const T* a, const T* b, T* y) {
    if constexpr (std::is_same_v<T, f32>)
        simd::active().mul(n, a, b, y);
    else
        detail::mul<T>(n, a, b, y);
}
template <typename T>
void k_axpy(int64_t n, T alpha, const T* x, T* y) {
    if constexpr (std::is_same_v<T, f32>)
        simd::active().axpy(n, alpha, x, y);
    else
        detail::axpy<T>(n, alpha, x, y);
}
template <typename T>
void k_scale(int64_t n, T alpha, const T* x, T* y) {
    if constexpr (std::is_same_v<T, f32>)
        simd::active().scale(n, alpha, x, y);
    else
        detail::scale<T>(n, alpha, x, y);
}
template <typename T>
T k_sum(int64_t n, const T* x) {
    if constexpr (std::is_same_v<T, f32>)
        return simd::active().sum(n, x);
    else
        return detail::sum<T>(n, x);
}
template <typename T>
T k_dot(int64_t n, const T* a, const T* b) {
    if constexpr (std::is_same_v<T, f32>)
        return simd::active().dot(n, a, b);
    else
        return detail::dot<T>(n, a, b);
}
template <typename T>
void k_softmax_row(int n, const T* x, T* y) {
    if constexpr (std::is_same_v<T, f32>)
        simd::active().softmax_row(n, x, y);
    else
        detail::softmax_row<T>(n, x, y);
}
template <typename T>
void k_layernorm_row(int n, const T* x, const T* g, const T* b, T eps, T* y, T* sm, T* sr) {
    if constexpr (std::is_same_v<T, f32>)
        simd::active().layernorm_row(n, x, g, b, eps, y, sm, sr);
    else
        detail::layernorm_row<T>(n, x, g, b, eps, y, sm, sr);
}

int64_t rows_of(const Shape& s) {
    int64_t r = 1;
    for (size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
    return r;
}

} // namespace

// ---------------------------------------------------------------------------
// node plumbing
// ---------------------------------------------------------------------------

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
    if (v.id < 0 || static_cast<size_t>(v.id) >= nodes_.size()) fail("tape: invalid var id ", v.id);
    return nodes_[static_cast<size_t>(v.id)];
}
template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
    if (v.id < 0 || static_cast<size_t>(v.id) >= nodes_.size()) fail("tape: invalid var id ", v.id);
    return nodes_[static_cast<size_t>(v.id)];
}

template <typename T>
int Tape<T>::new_node(Shape shape, std::span<const Var> inputs, const char* op) {
    for (int e : shape)
        if (e <= 0) fail(op, ": non-positive extent in shape ", shape_str(shape));
    Node n;
    n.shape = std::move(shape);
    n.n = numel(n.shape);
    n.off = vals_.size();
    for (Var in : inputs) {
        n.needs_grad = n.needs_grad || node(in).needs_grad;
        n.inputs.push_back(in.id);
    }
    vals_.resize(vals_.size() + static_cast<size_t>(n.n));
    nodes_.push_back(std::move(n));
    saved_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
void Tape<T>::check_same_shape(const char* op, Var a, Var b) const {
    if (node(a).shape != node(b).shape)
        fail(op, ": shape mismatch ", shape_str(node(a).shape), " vs ", shape_str(node(b).shape));
}

template <typename T>
void Tape<T>::maybe_check_finite(const char* op, int id) const {
    if (!debug_finite_) return;
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!all_finite(std::span<const T>(vals_.data() + n.off, static_cast<size_t>(n.n))))
        fail(op, ": non-finite output");
}

template <typename T>
std::span<const T> Tape<T>::val(Var v) const {
    const Node& n = node(v);
    return {vals_.data() + n.off, static_cast<size_t>(n.n)};
}
template <typename T>
std::span<T> Tape<T>::val_mut(Var v) {
    Node& n = node(v);
    return {vals_.data() + n.off, static_cast<size_t>(n.n)};
}
template <typename T>
std::span<const T> Tape<T>::grad(Var v) const {
    const Node& n = node(v);
    if (grads_.size() < vals_.size()) fail("tape: grad requested before backward");
    return {grads_.data() + n.off, static_cast<size_t>(n.n)};
}
template <typename T>
Array<T> Tape<T>::val_array(Var v) const {
    auto s = val(v);
    return Array<T>(node(v).shape, std::vector<T>(s.begin(), s.end()));
}
template <typename T>
Array<T> Tape<T>::grad_array(Var v) const {
    auto s = grad(v);
    return Array<T>(node(v).shape, std::vector<T>(s.begin(), s.end()));
}
template <typename T>
T Tape<T>::scalar(Var v) const {
    if (node(v).n != 1) fail("tape: scalar() on tensor of shape ", shape_str(node(v).shape));
    return val(v)[0];
}

template <typename T>
void Tape<T>::reset() {
    nodes_.clear();
    saved_.clear();
    vals_.clear();
    grads_.clear();
}

// ---------------------------------------------------------------------------
// graph entry
// ---------------------------------------------------------------------------

template <typename T>
Var Tape<T>::leaf(const Array<T>& value, bool requires_grad) {
    if (!all_finite(std::span<const T>(value.data)))
        fail("leaf: non-finite input for shape ", shape_str(value.shape));
    int id = new_node(value.shape, {}, "leaf");
    std::copy(value.data.begin(), value.data.end(), vptr(id));
    nodes_[static_cast<size_t>(id)].needs_grad = requires_grad;
    return {id};
}

template <typename T>
Var Tape<T>::zeros(const Shape& shape, bool requires_grad) {
    int id = new_node(shape, {}, "zeros");
    nodes_[static_cast<size_t>(id)].needs_grad = requires_grad;
    return {id};
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var Tape<T>::add(Var a, Var b) {
    check_same_shape("add", a, b);
    Var out{new_node(node(a).shape, std::array<Var, 2>{a, b}, "add")};
    k_add<T>(node(out).n, vptr(a.id), vptr(b.id), vptr(out.id));
    maybe_check_finite("add", out.id);
    node(out).back = [this, o = out.id, ai = a.id, bi = b.id] {
        int64_t n = nodes_[static_cast<size_t>(o)].n;
        if (nodes_[static_cast<size_t>(ai)].needs_grad) k_axpy<T>(n, T(1), gptr(o), gptr(ai));
        if (nodes_[static_cast<size_t>(bi)].needs_grad) k_axpy<T>(n, T(1), gptr(o), gptr(bi));
    };
    return out;
}

template <typename T>
Var Tape<T>::sub(Var a, Var b) {
    check_same_shape("sub", a, b);
    Var out{new_node(node(a).shape, std::array<Var, 2>{a, b}, "sub")};
    k_sub<T>(node(out).n, vptr(a.id), vptr(b.id), vptr(out.id));
    maybe_check_finite("sub", out.id);
    node(out).back = [this, o = out.id, ai = a.id, bi = b.id] {
        int64_t n = nodes_[static_cast<size_t>(o)].n;
        if (nodes_[static_cast<size_t>(ai)].needs_grad) k_axpy<T>(n, T(1), gptr(o), gptr(ai));
        if (nodes_[static_cast<size_t>(bi)].needs_grad) k_axpy<T>(n, T(-1), gptr(o), gptr(bi));
    };
    return out;
}

template <typename T>
Var Tape<T>::mul(Var a, Var b) {
    check_same_shape("mul", a, b);
    Var out{new_node(node(a).shape, std::array<Var, 2>{a, b}, "mul")};
    k_mul<T>(node(out).n, vptr(a.id), vptr(b.id), vptr(out.id));
    maybe_check_finite("mul", out.id);
    node(out).back = [this, o = out.id, ai = a.id, bi = b.id] {
        int64_t n = nodes_[static_cast<size_t>(o)].n;
        const T* g = gptr(o);
        if (nodes_[static_cast<size_t>(ai)].needs_grad) {
            const T* bv = vptr(bi);
            T* ga = gptr(ai);
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
        }
        if (nodes_[static_cast<size_t>(bi)].needs_grad) {
            const T* av = vptr(ai);
            T* gb = gptr(bi);
            for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
        }
    };
    return out;
}

template <typename T>
Var Tape<T>::div(Var a, Var b) {
    check_same_shape("div", a, b);
    Var out{new_node(node(a).shape, std::array<Var, 2>{a, b}, "div")};
    {
        const T* av = vptr(a.id);
        const T* bv = vptr(b.id);
        T* y = vptr(out.id);
        for (int64_t i = 0; i < node(out).n; ++i) y[i] = av[i] / bv[i];
    }
    maybe_check_finite("div", out.id);
    node(out).back = [this, o = out.id, ai = a.id, bi = b.id] {
        int64_t n = nodes_[static_cast<size_t>(o)].n;
        const T* g = gptr(o);
        const T* bv = vptr(bi);
        if (nodes_[static_cast<size_t>(ai)].needs_grad) {
            T* ga = gptr(ai);
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i] / bv[i];
        }
        if (nodes_[static_cast<size_t>(bi)].needs_grad) {
            const T* y = vptr(o);
            T* gb = gptr(bi);
            for (int64_t i = 0; i < n; ++i) gb[i] -= g[i] * y[i] / bv[i];
        }
    };
    return out;
}

template <typename T>
Var Tape<T>::smul(Var a, T s) {
    Var out{new_node(node(a).shape, std::array<Var, 1>{a}, "smul")};
    k_scale<T>(node(out).n, s, vptr(a.id), vptr(out.id));
    maybe_check_finite("smul", out.id);
    node(out).back = [this, o = out.id, ai = a.id, s] {
        if (nodes_[static_cast<size_t>(ai)].needs_grad)
            k_axpy<T>(nodes_[static_cast<size_t>(o)].n, s, gptr(o), gptr(ai));
    };
    return out;
}

template <typename T>
Var Tape<T>::add_scalar(Var a, T s) {
    Var out{new_node(node(a).shape, std::array<Var, 1>{a}, "add_scalar")};
    const T* av = vptr(a.id);
    T* y = vptr(out.id);
    for (int64_t i = 0; i < node(out).n; ++i) y[i] = av[i] + s;
    maybe_check_finite("add_scalar", out.id);
    node(out).back = [this, o = out.id, ai = a.id] {
        if (nodes_[static_cast<size_t>(ai)].needs_grad)
            k_axpy<T>(nodes_[static_cast<size_t>(o)].n, T(1), gptr(o), gptr(ai));
    };
    return out;
}

template <typename T>
template <typename FwdFn, typename BwdFn>
Var Tape<T>::unary_ew(const char* op, Var a, FwdFn fwd, BwdFn dfdx) {
    Var out{new_node(node(a).shape, std::array<Var, 1>{a}, op)};
    const T* av = vptr(a.id);
    T* y = vptr(out.id);
    for (int64_t i = 0; i < node(out).n; ++i) y[i] = fwd(av[i]);
    maybe_check_finite(op, out.id);
    node(out).back = [this, o = out.id, ai = a.id, dfdx] {
        if (!nodes_[static_cast<size_t>(ai)].needs_grad) return;
        int64_t n = nodes_[static_cast<size_t>(o)].n;
        const T* g = gptr(o);
        const T* x = vptr(ai);
        const T* y = vptr(o);
        T* ga = gptr(ai);
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
    };
    return out;
}

template <typename T>
Var Tape<T>::exp(Var a) {
    return unary_ew(
        "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var Tape<T>::log(Var a) {
    return unary_ew(
        "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var Tape<T>::sqrt(Var a) {
    return unary_ew(
        "sqrt", a, [](T x) { return std::sqrt(x); },
        [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var Tape<T>::gelu(Var a) {
    // tanh form; the tanh values are cached for the backward pass. The f32
    // path uses the polynomial tanh (hot loop), f64 stays on libm.
    constexpr T c = T(0.7978845608028654); // sqrt(2/pi)
    constexpr T q = T(0.044715);
    Var out{new_node(node(a).shape, std::array<Var, 1>{a}, "gelu")};
    auto& save = saved_[static_cast<size_t>(out.id)];
    int64_t n = node(out).n;
    save.resize(static_cast<size_t>(n));
    if constexpr (std::is_same_v<T, f32>) {
        simd::active().gelu_fwd(n, vptr(a.id), vptr(out.id), save.data());
    } else {
        const T* x = vptr(a.id);
        T* y = vptr(out.id);
        for (int64_t i = 0; i < n; ++i) {
            T u = c * (x[i] + q * x[i] * x[i] * x[i]);
            T th = std::tanh(u);
            save[static_cast<size_t>(i)] = th;
            y[i] = T(0.5) * x[i] * (T(1) + th);
        }
    }
    maybe_check_finite("gelu", out.id);
    node(out).back = [this, o = out.id, ai = a.id, c, q, n] {
        if (!nodes_[static_cast<size_t>(ai)].needs_grad) return;
        const T* g = gptr(o);
        const T* x = vptr(ai);
        const auto& save = saved_[static_cast<size_t>(o)];
        T* ga = gptr(ai);
        if constexpr (std::is_same_v<T, f32>) {
            simd::active().gelu_bwd(n, g, x, save.data(), ga);
        } else {
            for (int64_t i = 0; i < n; ++i) {
                T th = save[static_cast<size_t>(i)];
                T sech2 = T(1) - th * th;
                ga[i] += g[i] * (T(0.5) * (T(1) + th) +
                                 T(0.5) * x[i] * sech2 * c * (T(1) + T(3) * q * x[i] * x[i]));
            }
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
    const Shape& sa = node(a).shape;
    const Shape& sb = node(b).shape;
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        fail("matmul: shape mismatch ", shape_str(sa), " vs ", shape_str(sb));
    int m = sa[0], k = sa[1], n = sb[1];
    Var out{new_node({m, n}, std::array<Var, 2>{a, b}, "matmul")};
    k_gemm<T>(m, n, k, vptr(a.id), k, vptr(b.id), n, vptr(out.id), n, false);
    maybe_check_finite("matmul", out.id);
    node(out).back = [this, o = out.id, ai = a.id, bi = b.id, m, n, k] {
        const T* g = gptr(o);
        if (nodes_[static_cast<size_t>(ai)].needs_grad) {
            std::vector<T> bt(static_cast<size_t>(n) * k);
            k_transpose<T>(k, n, vptr(bi), bt.data());
            k_gemm<T>(m, k, n, g, n, bt.data(), k, gptr(ai), k, true);
        }
        if (nodes_[static_cast<size_t>(bi)].needs_grad) {
            std::vector<T> at(static_cast<size_t>(k) * m);
            k_transpose<T>(m, k, vptr(ai), at.data());
            k_gemm<T>(k, n, m, at.data(), m, g, n, gptr(bi), n, true);
        }
    };
    return out;
}

template <typename T>
Var Tape<T>::linear(Var x, Var w, Var b) {
    const Shape& sx = node(x).shape;
    const Shape& sw = node(w).shape;
    const Shape& sb = node(b).shape;
    if (sx.size() != 2 || sw.size() != 2 || sx[1] != sw[0])
        fail("linear: shape mismatch ", shape_str(sx), " vs ", shape_str(sw));
    if (sb.size() != 1 || sb[0] != sw[1])
        fail("linear: bias shape ", shape_str(sb), " vs weight ", shape_str(sw));
    int m = sx[0], k = sx[1], n = sw[1];
    Var out{new_node({m, n}, std::array<Var, 3>{x, w, b}, "linear")};
    k_gemm<T>(m, n, k, vptr(x.id), k, vptr(w.id), n, vptr(out.id), n, false);
    {
        T* y = vptr(out.id);
        const T* bv = vptr(b.id);
        for (int r = 0; r < m; ++r) k_add<T>(n, y + static_cast<int64_t>(r) * n, bv, y + static_cast<int64_t>(r) * n);
    }
    maybe_check_finite("linear", out.id);
    node(out).back = [this, o = out.id, xi = x.id, wi = w.id, bi = b.id, m, n, k] {
        const T* g = gptr(o);
        if (nodes_[static_cast<size_t>(xi)].needs_grad) {
            std::vector<T> wt(static_cast<size_t>(n) * k);
            k_transpose<T>(k, n, vptr(wi), wt.data());
            k_gemm<T>(m, k, n, g, n, wt.data(), k, gptr(xi), k, true);
        }
        if (nodes_[static_cast<size_t>(wi)].needs_grad) {
            std::vector<T> xt(static_cast<size_t>(k) * m);
            k_transpose<T>(m, k, vptr(xi), xt.data());
            k_gemm<T>(k, n, m, xt.data(), m, g, n, gptr(wi), n, true);
        }
        if (nodes_[static_cast<size_t>(bi)].needs_grad) {
            T* gb = gptr(bi);
            for (int r = 0; r < m; ++r) k_add<T>(n, gb, g + static_cast<int64_t>(r) * n, gb);
        }
    };
    return out;
}

template <typename T>
Var Tape<T>::linear(Var x, Var w) {
    return matmul(x, w);
}

template <typename T>
Var Tape<T>::bmm(Var a, Var b) {
    const Shape& sa = node(a).shape;
    const Shape& sb = node(b).shape;
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
        fail("bmm: shape mismatch ", shape_str(sa), " vs ", shape_str(sb));
    int nb = sa[0], m = sa[1], k = sa[2], n = sb[2];
    Var out{new_node({nb, m, n}, std::array<Var, 2>{a, b}, "bmm")};
    for (int i = 0; i < nb; ++i)
        k_gemm<T>(m, n, k, vptr(a.id) + static_cast<int64_t>(i) * m * k, k,
                  vptr(b.id) + static_cast<int64_t>(i) * k * n, n,
                  vptr(out.id) + static_cast<int64_t>(i) * m * n, n, false);
    maybe_check_finite("bmm", out.id);
    node(out).back = [this, o = out.id, ai = a.id, bi = b.id, nb, m, n, k] {
        bool need_a = nodes_[static_cast<size_t>(ai)].needs_grad;
        bool need_b = nodes_[static_cast<size_t>(bi)].needs_grad;
        std::vector<T> tmp(static_cast<size_t>(std::max(n * k, k * m)));
        for (int i = 0; i < nb; ++i) {
            const T* g = gptr(o) + static_cast<int64_t>(i) * m * n;
            if (need_a) {
                k_transpose<T>(k, n, vptr(bi) + static_cast<int64_t>(i) * k * n, tmp.data());
                k_gemm<T>(m, k, n, g, n, tmp.data(), k, gptr(ai) + static_cast<int64_t>(i) * m * k,
                          k, true);
            }
            if (need_b) {
                k_transpose<T>(m, k, vptr(ai) + static_cast<int64_t>(i) * m * k, tmp.data());
                k_gemm<T>(k, n, m, tmp.data(), m, g, n, gptr(bi) + static_cast<int64_t>(i) * k * n,
                          n, true);
            }
        }
    };
    return out;
}

template <typename T>
Var Tape<T>::transpose(Var a) {
    const Shape& sa = node(a).shape;
    if (sa.size() != 2) fail("transpose: expected rank 2, got ", shape_str(sa));
    int r = sa[0], c = sa[1];
    Var out{new_node({c, r}, std::array<Var, 1>{a}, "transpose")};
    k_transpose<T>(r, c, vptr(a.id), vptr(out.id));
    node(out).back = [this, o = out.id, ai = a.id, r, c] {
        if (!nodes_[static_cast<size_t>(ai)].needs_grad) return;
        std::vector<T> t(static_cast<size_t>(r) * c);
        k_transpose<T>(c, r, gptr(o), t.data());
        k_add<T>(static_cast<int64_t>(r) * c, gptr(ai), t.data(), gptr(ai));
    };
    return out;
}

template <typename T>
Var Tape<T>::permute(Var a, const std::vector<int>& perm) {
    const Shape& sa = node(a).shape;
    size_t rank = sa.size();
    if (perm.size() != rank || rank > 4) fail("permute: bad permutation for ", shape_str(sa));
    std::vector<bool> seen(rank, false);
    Shape so(rank);
    for (size_t i = 0; i < rank; ++i) {
        if (perm[i] < 0 || perm[i] >= static_cast<int>(rank) || seen[static_cast<size_t>(perm[i])])
            fail("permute: invalid permutation");
        seen[static_cast<size_t>(perm[i])] = true;
        so[i] = sa[static_cast<size_t>(perm[i])];
    }
    // strides of input, mapped to output axis order (computed before new_node:
    // sa references nodes_ storage, which new_node may reallocate)
    std::vector<int64_t> in_strides(rank, 1);
    for (int i = static_cast<int>(rank) - 2; i >= 0; --i)
        in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i) + 1] * sa[static_cast<size_t>(i) + 1];
    std::vector<int64_t> map_strides(rank), out_strides(rank, 1);
    Var out{new_node(so, std::array<Var, 1>{a}, "permute")};
    for (size_t i = 0; i < rank; ++i) map_strides[i] = in_strides[static_cast<size_t>(perm[i])];
    for (int i = static_cast<int>(rank) - 2; i >= 0; --i)
        out_strides[static_cast<size_t>(i)] = out_strides[static_cast<size_t>(i) + 1] * so[static_cast<size_t>(i) + 1];
    // Suffix axes that the permutation leaves in place are contiguous in
    // both layouts; copy them as whole runs instead of per-element
    // (the attention reshuffles all keep the last axis).
    size_t kept = 0;
    while (kept < rank - 1 && perm[rank - 1 - kept] == static_cast<int>(rank - 1 - kept)) ++kept;
    int64_t run = 1;
    for (size_t i = rank - kept; i < rank; ++i) run *= so[i];
    size_t loops = rank - kept;

    const T* x = vptr(a.id);
    T* y = vptr(out.id);
    int64_t n = node(out).n;
    std::array<int64_t, 4> coord{0, 0, 0, 0};
    for (int64_t idx = 0; idx < n; idx += run) {
        int64_t src = 0;
        for (size_t d = 0; d < loops; ++d) src += coord[d] * map_strides[d];
        std::copy_n(x + src, static_cast<size_t>(run), y + idx);
        for (size_t d = loops; d-- > 0;) {
            if (++coord[d] < so[d]) break;
            coord[d] = 0;
        }
    }
    node(out).back = [this, o = out.id, ai = a.id, so, map_strides, run, loops] {
        if (!nodes_[static_cast<size_t>(ai)].needs_grad) return;
        const T* g = gptr(o);
        T* ga = gptr(ai);
        int64_t n = nodes_[static_cast<size_t>(o)].n;
        std::array<int64_t, 4> coord{0, 0, 0, 0};
        for (int64_t idx = 0; idx < n; idx += run) {
            int64_t src = 0;
            for (size_t d = 0; d < loops; ++d) src += coord[d] * map_strides[d];
            k_add<T>(run, ga + src, g + idx, ga + src);
            for (size_t d = loops; d-- > 0;) {
                if (++coord[d] < so[d]) break;
                coord[d] = 0;
            }
        }
    };
    return out;
}

template <typename T>
Var Tape<T>::reshape(Var a, const Shape& shape) {
    if (numel(shape) != node(a).n)
        fail("reshape: cannot reshape ", shape_str(node(a).shape), " to ", shape_str(shape));
    // Alias node: shares the input's value and grad storage.
    Node n;
    n.shape = shape;
    n.n = node(a).n;
    n.off = node(a).off;
    n.needs_grad = node(a).needs_grad;
    n.inputs.push_back(a.id);
    nodes_.push_back(std::move(n));
    saved_.emplace_back();
    return {static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::slice(Var a, int axis, int start, int len) {
    const Shape& sa = node(a).shape;
    if (axis < 0 || axis >= static_cast<int>(sa.size()))
        fail("slice: axis ", axis, " out of range for ", shape_str(sa));
    if (start < 0 || len <= 0 || start + len > sa[static_cast<size_t>(axis)])
        fail("slice: range [", start, ",", start + len, ") out of bounds for ", shape_str(sa));
    Shape so = sa;
    so[static_cast<size_t>(axis)] = len;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= sa[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < sa.size(); ++i) inner *= sa[i];
    int64_t ext = sa[static_cast<size_t>(axis)];
    Var out{new_node(so, std::array<Var, 1>{a}, "slice")};
    const T* x = vptr(a.id);
    T* y = vptr(out.id);
    for (int64_t u = 0; u < outer; ++u)
        std::copy_n(x + (u * ext + start) * inner, static_cast<size_t>(len * inner),
                    y + u * len * inner);
    node(out).back = [this, o = out.id, ai = a.id, outer, inner, ext, start, len] {
        if (!nodes_[static_cast<size_t>(ai)].needs_grad) return;
        const T* g = gptr(o);
        T* ga = gptr(ai);
        for (int64_t u = 0; u < outer; ++u)
            k_add<T>(len * inner, ga + (u * ext + start) * inner, g + u * len * inner,
                     ga + (u * ext + start) * inner);
    };
    return out;
}

template <typename T>
Var Tape<T>::concat(std::span<const Var> parts, int axis) {
    if (parts.empty()) fail("concat: no inputs");
    const Shape& s0 = node(parts[0]).shape;
    if (axis < 0 || axis >= static_cast<int>(s0.size()))
        fail("concat: axis ", axis, " out of range for ", shape_str(s0));
    Shape so = s0;
    int total = 0;
    for (Var p : parts) {
        const Shape& sp = node(p).shape;
        if (sp.size() != s0.size()) fail("concat: rank mismatch");
        for (size_t i = 0; i < sp.size(); ++i)
            if (static_cast<int>(i) != axis && sp[i] != s0[i])
                fail("concat: shape mismatch ", shape_str(sp), " vs ", shape_str(s0));
        total += sp[static_cast<size_t>(axis)];
    }
    so[static_cast<size_t>(axis)] = total;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s0.size(); ++i) inner *= s0[i];
    Var out{new_node(so, parts, "concat")};
    T* y = vptr(out.id);
    int64_t off_ext = 0;
    std::vector<std::pair<int, int>> extents; // (input id, extent)
    for (Var p : parts) {
        int64_t ext = node(p).shape[static_cast<size_t>(axis)];
        const T* x = vptr(p.id);
        for (int64_t u = 0; u < outer; ++u)
            std::copy_n(x + u * ext * inner, static_cast<size_t>(ext * inner),
                        y + (u * total + off_ext) * inner);
        extents.emplace_back(p.id, static_cast<int>(ext));
        off_ext += ext;
    }
    node(out).back = [this, o = out.id, extents, outer, inner, total] {
        const T* g = gptr(o);
        int64_t off_ext = 0;
        for (auto [pid, ext] : extents) {
            if (nodes_[static_cast<size_t>(pid)].needs_grad) {
                T* gp = gptr(pid);
                for (int64_t u = 0; u < outer; ++u)
                    k_add<T>(static_cast<int64_t>(ext) * inner, gp + u * ext * inner,
                             g + (u * total + off_ext) * inner, gp + u * ext * inner);
            }
            off_ext += ext;
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// reductions & rows
// ---------------------------------------------------------------------------

template <typename T>
Var Tape<T>::sum(Var a) {
    Var out{new_node({1}, std::array<Var, 1>{a}, "sum")};
    vptr(out.id)[0] = k_sum<T>(node(a).n, vptr(a.id));
    maybe_check_finite("sum", out.id);
    node(out).back = [this, o = out.id, ai = a.id] {
        if (!nodes_[static_cast<size_t>(ai)].needs_grad) return;
        T g = gptr(o)[0];
        T* ga = gptr(ai);
        int64_t n = nodes_[static_cast<size_t>(ai)].n;
        for (int64_t i = 0; i < n; ++i) ga[i] += g;
    };
    return out;
}

template <typename T>
Var Tape<T>::mean(Var a) {
    int64_t n = node(a).n;
    Var out{new_node({1}, std::array<Var, 1>{a}, "mean")};
    vptr(out.id)[0] = k_sum<T>(n, vptr(a.id)) / static_cast<T>(n);
    maybe_check_finite("mean", out.id);
    node(out).back = [this, o = out.id, ai = a.id, n] {
        if (!nodes_[static_cast<size_t>(ai)].needs_grad) return;
        T g = gptr(o)[0] / static_cast<T>(n);
        T* ga = gptr(ai);
        for (int64_t i = 0; i < n; ++i) ga[i] += g;
    };
    return out;
}

template <typename T>
Var Tape<T>::mean_axis(Var a, int axis) {
    const Shape& sa = node(a).shape;
    if (axis < 0 || axis >= static_cast<int>(sa.size()))
        fail("mean_axis: axis ", axis, " out of range for ", shape_str(sa));
    Shape so;
    for (size_t i = 0; i < sa.size(); ++i)
        if (static_cast<int>(i) != axis) so.push_back(sa[i]);
    if (so.empty()) so.push_back(1);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= sa[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < sa.size(); ++i) inner *= sa[i];
    int64_t ext = sa[static_cast<size_t>(axis)];
    Var out{new_node(so, std::array<Var, 1>{a}, "mean_axis")};
    const T* x = vptr(a.id);
    T* y = vptr(out.id);
    T invk = T(1) / static_cast<T>(ext);
    for (int64_t u = 0; u < outer; ++u)
        for (int64_t i = 0; i < inner; ++i) {
            T s = T(0);
            for (int64_t e = 0; e < ext; ++e) s += x[(u * ext + e) * inner + i];
            y[u * inner + i] = s * invk;
        }
    maybe_check_finite("mean_axis", out.id);
    node(out).back = [this, o = out.id, ai = a.id, outer, inner, ext, invk] {
        if (!nodes_[static_cast<size_t>(ai)].needs_grad) return;
        const T* g = gptr(o);
        T* ga = gptr(ai);
        for (int64_t u = 0; u < outer; ++u)
            for (int64_t e = 0; e < ext; ++e)
                k_axpy<T>(inner, invk, g + u * inner, ga + (u * ext + e) * inner);
    };
    return out;
}

template <typename T>
Var Tape<T>::softmax(Var a) {
    const Shape& sa = node(a).shape;
    int cols = sa.back();
    int64_t rows = rows_of(sa);
    Var out{new_node(sa, std::array<Var, 1>{a}, "softmax")};
    const T* x = vptr(a.id);
    T* y = vptr(out.id);
    for (int64_t r = 0; r < rows; ++r) k_softmax_row<T>(cols, x + r * cols, y + r * cols);
    maybe_check_finite("softmax", out.id);
    node(out).back = [this, o = out.id, ai = a.id, rows, cols] {
        if (!nodes_[static_cast<size_t>(ai)].needs_grad) return;
        const T* g = gptr(o);
        const T* y = vptr(o);
        T* ga = gptr(ai);
        for (int64_t r = 0; r < rows; ++r) {
            const T* gr = g + r * cols;
            const T* yr = y + r * cols;
            T s = k_dot<T>(cols, gr, yr);
            T* gar = ga + r * cols;
            for (int c = 0; c < cols; ++c) gar[c] += yr[c] * (gr[c] - s);
        }
    };
    return out;
}

template <typename T>
Var Tape<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
    const Shape& sx = node(x).shape;
    int cols = sx.back();
    int64_t rows = rows_of(sx);
    const Shape& sg = node(gamma).shape;
    const Shape& sb = node(beta).shape;
    if (sg.size() != 1 || sg[0] != cols || sb.size() != 1 || sb[0] != cols)
        fail("layer_norm: gain/bias ", shape_str(sg), "/", shape_str(sb), " vs input ",
             shape_str(sx));
    Var out{new_node(sx, std::array<Var, 3>{x, gamma, beta}, "layer_norm")};
    auto& save = saved_[static_cast<size_t>(out.id)];
    save.resize(static_cast<size_t>(rows) * 2);
    const T* xv = vptr(x.id);
    T* y = vptr(out.id);
    for (int64_t r = 0; r < rows; ++r)
        k_layernorm_row<T>(cols, xv + r * cols, vptr(gamma.id), vptr(beta.id), eps, y + r * cols,
                           &save[static_cast<size_t>(r) * 2], &save[static_cast<size_t>(r) * 2 + 1]);
    maybe_check_finite("layer_norm", out.id);
    node(out).back = [this, o = out.id, xi = x.id, gi = gamma.id, bi = beta.id, rows, cols] {
        const T* g = gptr(o);
        const T* xv = vptr(xi);
        const T* gammav = vptr(gi);
        const auto& save = saved_[static_cast<size_t>(o)];
        bool need_x = nodes_[static_cast<size_t>(xi)].needs_grad;
        bool need_g = nodes_[static_cast<size_t>(gi)].needs_grad;
        bool need_b = nodes_[static_cast<size_t>(bi)].needs_grad;
        for (int64_t r = 0; r < rows; ++r) {
            T mean = save[static_cast<size_t>(r) * 2];
            T rstd = save[static_cast<size_t>(r) * 2 + 1];
            const T* gr = g + r * cols;
            const T* xr = xv + r * cols;
            if (need_g) {
                T* gg = gptr(gi);
                for (int c = 0; c < cols; ++c) gg[c] += gr[c] * (xr[c] - mean) * rstd;
            }
            if (need_b) {
                T* gb = gptr(bi);
                for (int c = 0; c < cols; ++c) gb[c] += gr[c];
            }
            if (need_x) {
                T m1 = T(0), m2 = T(0);
                for (int c = 0; c < cols; ++c) {
                    T dyn = gr[c] * gammav[c];
                    T xh = (xr[c] - mean) * rstd;
                    m1 += dyn;
                    m2 += dyn * xh;
                }
                m1 /= static_cast<T>(cols);
                m2 /= static_cast<T>(cols);
                T* gx = gptr(xi);
                for (int c = 0; c < cols; ++c) {
                    T dyn = gr[c] * gammav[c];
                    T xh = (xr[c] - mean) * rstd;
                    gx[r * cols + c] += rstd * (dyn - m1 - xh * m2);
                }
            }
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

template <typename T>
Var Tape<T>::mse(Var a, Var b) {
    check_same_shape("mse", a, b);
    int64_t n = node(a).n;
    Var out{new_node({1}, std::array<Var, 2>{a, b}, "mse")};
    const T* av = vptr(a.id);
    const T* bv = vptr(b.id);
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) {
        T d = av[i] - bv[i];
        s += d * d;
    }
    vptr(out.id)[0] = s / static_cast<T>(n);
    maybe_check_finite("mse", out.id);
    node(out).back = [this, o = out.id, ai = a.id, bi = b.id, n] {
        T g = gptr(o)[0] * T(2) / static_cast<T>(n);
        const T* av = vptr(ai);
        const T* bv = vptr(bi);
        if (nodes_[static_cast<size_t>(ai)].needs_grad) {
            T* ga = gptr(ai);
            for (int64_t i = 0; i < n; ++i) ga[i] += g * (av[i] - bv[i]);
        }
        if (nodes_[static_cast<size_t>(bi)].needs_grad) {
            T* gb = gptr(bi);
            for (int64_t i = 0; i < n; ++i) gb[i] -= g * (av[i] - bv[i]);
        }
    };
    return out;
}

template <typename T>
Var Tape<T>::smooth_l1(Var a, Var b, T beta) {
    check_same_shape("smooth_l1", a, b);
    if (beta <= T(0)) fail("smooth_l1: beta must be positive");
    int64_t n = node(a).n;
    Var out{new_node({1}, std::array<Var, 2>{a, b}, "smooth_l1")};
    const T* av = vptr(a.id);
    const T* bv = vptr(b.id);
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) {
        T d = av[i] - bv[i];
        T ad = std::abs(d);
        s += ad < beta ? T(0.5) * d * d / beta : ad - T(0.5) * beta;
    }
    vptr(out.id)[0] = s / static_cast<T>(n);
    maybe_check_finite("smooth_l1", out.id);
    node(out).back = [this, o = out.id, ai = a.id, bi = b.id, n, beta] {
        T g = gptr(o)[0] / static_cast<T>(n);
        const T* av = vptr(ai);
        const T* bv = vptr(bi);
        auto dval = [beta](T d) { return std::abs(d) < beta ? d / beta : (d > T(0) ? T(1) : T(-1)); };
        if (nodes_[static_cast<size_t>(ai)].needs_grad) {
            T* ga = gptr(ai);
            for (int64_t i = 0; i < n; ++i) ga[i] += g * dval(av[i] - bv[i]);
        }
        if (nodes_[static_cast<size_t>(bi)].needs_grad) {
            T* gb = gptr(bi);
            for (int64_t i = 0; i < n; ++i) gb[i] -= g * dval(av[i] - bv[i]);
        }
    };
    return out;
}

template <typename T>
Var Tape<T>::cross_entropy_rows(Var logits, const std::vector<int>& targets) {
    const Shape& sl = node(logits).shape;
    if (sl.size() != 2) fail("cross_entropy_rows: expected rank 2, got ", shape_str(sl));
    int rows = sl[0], cols = sl[1];
    if (static_cast<int>(targets.size()) != rows)
        fail("cross_entropy_rows: ", targets.size(), " targets for ", rows, " rows");
    for (int t : targets)
        if (t < 0 || t >= cols) fail("cross_entropy_rows: target ", t, " out of range");
    Var out{new_node({1}, std::array<Var, 1>{logits}, "cross_entropy_rows")};
    auto& probs = saved_[static_cast<size_t>(out.id)];
    probs.resize(static_cast<size_t>(rows) * cols);
    const T* x = vptr(logits.id);
    T loss = T(0);
    for (int r = 0; r < rows; ++r) {
        k_softmax_row<T>(cols, x + static_cast<int64_t>(r) * cols, probs.data() + static_cast<int64_t>(r) * cols);
        loss -= std::log(probs[static_cast<size_t>(r) * cols + static_cast<size_t>(targets[static_cast<size_t>(r)])]);
    }
    vptr(out.id)[0] = loss / static_cast<T>(rows);
    maybe_check_finite("cross_entropy_rows", out.id);
    node(out).back = [this, o = out.id, li = logits.id, targets, rows, cols] {
        if (!nodes_[static_cast<size_t>(li)].needs_grad) return;
        T g = gptr(o)[0] / static_cast<T>(rows);
        const auto& probs = saved_[static_cast<size_t>(o)];
        T* gl = gptr(li);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                T p = probs[static_cast<size_t>(r) * cols + static_cast<size_t>(c)];
                gl[static_cast<int64_t>(r) * cols + c] +=
                    g * (p - (targets[static_cast<size_t>(r)] == c ? T(1) : T(0)));
            }
    };
    return out;
}

// ---------------------------------------------------------------------------
// lookups & layout helpers
// ---------------------------------------------------------------------------

template <typename T>
Var Tape<T>::embed(const std::vector<int>& ids, Var table) {
    const Shape& st = node(table).shape;
    if (st.size() != 2) fail("embed: table must be rank 2, got ", shape_str(st));
    int v = st[0], d = st[1];
    for (int id : ids)
        if (id < 0 || id >= v) fail("embed: index ", id, " out of range [0,", v, ")");
    Var out{new_node({static_cast<int>(ids.size()), d}, std::array<Var, 1>{table}, "embed")};
    const T* tv = vptr(table.id);
    T* y = vptr(out.id);
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(tv + static_cast<int64_t>(ids[i]) * d, static_cast<size_t>(d),
                    y + static_cast<int64_t>(i) * d);
    node(out).back = [this, o = out.id, ti = table.id, ids, d] {
        if (!nodes_[static_cast<size_t>(ti)].needs_grad) return;
        const T* g = gptr(o);
        T* gt = gptr(ti);
        for (size_t i = 0; i < ids.size(); ++i)
            k_add<T>(d, gt + static_cast<int64_t>(ids[i]) * d, g + static_cast<int64_t>(i) * d,
                     gt + static_cast<int64_t>(ids[i]) * d);
    };
    return out;
}

template <typename T>
Var Tape<T>::timestep_embed(std::span<const int64_t> ts, int dim) {
    if (dim % 2 != 0) fail("timestep_embed: dim must be even, got ", dim);
    int half = dim / 2;
    Var out{new_node({static_cast<int>(ts.size()), dim}, {}, "timestep_embed")};
    T* y = vptr(out.id);
    const double log_max_period = std::log(10000.0);
    for (size_t i = 0; i < ts.size(); ++i) {
        for (int j = 0; j < half; ++j) {
            double freq = std::exp(-log_max_period * static_cast<double>(j) / half);
            double arg = static_cast<double>(ts[i]) * freq;
            y[static_cast<int64_t>(i) * dim + j] = static_cast<T>(std::sin(arg));
            y[static_cast<int64_t>(i) * dim + half + j] = static_cast<T>(std::cos(arg));
        }
    }
    return out;
}

template <typename T>
Var Tape<T>::repeat_interleave_rows(Var v, int times) {
    const Shape& sv = node(v).shape;
    if (sv.size() != 2) fail("repeat_interleave_rows: expected rank 2, got ", shape_str(sv));
    if (times <= 0) fail("repeat_interleave_rows: times must be positive");
    int b = sv[0], d = sv[1];
    Var out{new_node({b * times, d}, std::array<Var, 1>{v}, "repeat_interleave_rows")};
    const T* x = vptr(v.id);
    T* y = vptr(out.id);
    for (int r = 0; r < b; ++r)
        for (int t = 0; t < times; ++t)
            std::copy_n(x + static_cast<int64_t>(r) * d, static_cast<size_t>(d),
                        y + (static_cast<int64_t>(r) * times + t) * d);
    node(out).back = [this, o = out.id, vi = v.id, b, d, times] {
        if (!nodes_[static_cast<size_t>(vi)].needs_grad) return;
        const T* g = gptr(o);
        T* gv = gptr(vi);
        for (int r = 0; r < b; ++r)
            for (int t = 0; t < times; ++t)
                k_add<T>(d, gv + static_cast<int64_t>(r) * d,
                         g + (static_cast<int64_t>(r) * times + t) * d,
                         gv + static_cast<int64_t>(r) * d);
    };
    return out;
}

template <typename T>
Var Tape<T>::tile_rows(Var m, int times) {
    const Shape& sm = node(m).shape;
    if (sm.size() != 2) fail("tile_rows: expected rank 2, got ", shape_str(sm));
    if (times <= 0) fail("tile_rows: times must be positive");
    int r = sm[0], c = sm[1];
    Var out{new_node({times * r, c}, std::array<Var, 1>{m}, "tile_rows")};
    const T* x = vptr(m.id);
    T* y = vptr(out.id);
    for (int t = 0; t < times; ++t)
        std::copy_n(x, static_cast<size_t>(r) * c, y + static_cast<int64_t>(t) * r * c);
    node(out).back = [this, o = out.id, mi = m.id, r, c, times] {
        if (!nodes_[static_cast<size_t>(mi)].needs_grad) return;
        const T* g = gptr(o);
        T* gm = gptr(mi);
        for (int t = 0; t < times; ++t)
            k_add<T>(static_cast<int64_t>(r) * c, gm, g + static_cast<int64_t>(t) * r * c, gm);
    };
    return out;
}

template <typename T>
Var Tape<T>::scale_rows(Var x, Var s) {
    const Shape& sx = node(x).shape;
    const Shape& ss = node(s).shape;
    if (sx.size() != 2 || ss.size() != 1 || ss[0] != sx[0])
        fail("scale_rows: shape mismatch ", shape_str(sx), " vs ", shape_str(ss));
    int r = sx[0], c = sx[1];
    Var out{new_node(sx, std::array<Var, 2>{x, s}, "scale_rows")};
    const T* xv = vptr(x.id);
    const T* sv = vptr(s.id);
    T* y = vptr(out.id);
    for (int i = 0; i < r; ++i)
        k_scale<T>(c, sv[i], xv + static_cast<int64_t>(i) * c, y + static_cast<int64_t>(i) * c);
    maybe_check_finite("scale_rows", out.id);
    node(out).back = [this, o = out.id, xi = x.id, si = s.id, r, c] {
        const T* g = gptr(o);
        const T* xv = vptr(xi);
        const T* sv = vptr(si);
        if (nodes_[static_cast<size_t>(xi)].needs_grad) {
            T* gx = gptr(xi);
            for (int i = 0; i < r; ++i)
                k_axpy<T>(c, sv[i], g + static_cast<int64_t>(i) * c, gx + static_cast<int64_t>(i) * c);
        }
        if (nodes_[static_cast<size_t>(si)].needs_grad) {
            T* gs = gptr(si);
            for (int i = 0; i < r; ++i)
                gs[i] += k_dot<T>(c, g + static_cast<int64_t>(i) * c, xv + static_cast<int64_t>(i) * c);
        }
    };
    return out;
}

template <typename T>
Var Tape<T>::im2col(Var x, int kernel, int stride, int pad) {
    const Shape& sx = node(x).shape;
    if (sx.size() != 3) fail("im2col: expected [B,L,C], got ", shape_str(sx));
    if (kernel <= 0 || stride <= 0 || pad < 0) fail("im2col: bad kernel/stride/pad");
    int b = sx[0], l = sx[1], c = sx[2];
    int lout = (l + 2 * pad - kernel) / stride + 1;
    if (lout <= 0) fail("im2col: empty output for input ", shape_str(sx));
    Var out{new_node({b, lout, kernel * c}, std::array<Var, 1>{x}, "im2col")};
    const T* xv = vptr(x.id);
    T* y = vptr(out.id);
    for (int bi = 0; bi < b; ++bi)
        for (int o = 0; o < lout; ++o)
            for (int j = 0; j < kernel; ++j) {
                int src = o * stride + j - pad;
                T* dst = y + ((static_cast<int64_t>(bi) * lout + o) * kernel + j) * c;
                if (src < 0 || src >= l)
                    std::fill_n(dst, static_cast<size_t>(c), T(0));
                else
                    std::copy_n(xv + (static_cast<int64_t>(bi) * l + src) * c, static_cast<size_t>(c), dst);
            }
    node(out).back = [this, o = out.id, xi = x.id, b, l, c, lout, kernel, stride, pad] {
        if (!nodes_[static_cast<size_t>(xi)].needs_grad) return;
        const T* g = gptr(o);
        T* gx = gptr(xi);
        for (int bi = 0; bi < b; ++bi)
            for (int oo = 0; oo < lout; ++oo)
                for (int j = 0; j < kernel; ++j) {
                    int src = oo * stride + j - pad;
                    if (src < 0 || src >= l) continue;
                    k_add<T>(c, gx + (static_cast<int64_t>(bi) * l + src) * c,
                             g + ((static_cast<int64_t>(bi) * lout + oo) * kernel + j) * c,
                             gx + (static_cast<int64_t>(bi) * l + src) * c);
                }
    };
    return out;
}

template <typename T>
Var Tape<T>::upsample2(Var x) {
    const Shape& sx = node(x).shape;
    if (sx.size() != 3) fail("upsample2: expected [B,L,C], got ", shape_str(sx));
    int b = sx[0], l = sx[1], c = sx[2];
    Var out{new_node({b, 2 * l, c}, std::array<Var, 1>{x}, "upsample2")};
    const T* xv = vptr(x.id);
    T* y = vptr(out.id);
    for (int bi = 0; bi < b; ++bi)
        for (int i = 0; i < l; ++i) {
            const T* src = xv + (static_cast<int64_t>(bi) * l + i) * c;
            std::copy_n(src, static_cast<size_t>(c), y + (static_cast<int64_t>(bi) * 2 * l + 2 * i) * c);
            std::copy_n(src, static_cast<size_t>(c), y + (static_cast<int64_t>(bi) * 2 * l + 2 * i + 1) * c);
        }
    node(out).back = [this, o = out.id, xi = x.id, b, l, c] {
        if (!nodes_[static_cast<size_t>(xi)].needs_grad) return;
        const T* g = gptr(o);
        T* gx = gptr(xi);
        for (int bi = 0; bi < b; ++bi)
            for (int i = 0; i < l; ++i) {
                T* dst = gx + (static_cast<int64_t>(bi) * l + i) * c;
                k_add<T>(c, dst, g + (static_cast<int64_t>(bi) * 2 * l + 2 * i) * c, dst);
                k_add<T>(c, dst, g + (static_cast<int64_t>(bi) * 2 * l + 2 * i + 1) * c, dst);
            }
    };
    return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <typename T>
void Tape<T>::backward(Var loss) {
    const Node& ln = node(loss);
    if (ln.n != 1) fail("backward: loss must be scalar, got ", shape_str(ln.shape));
    grads_.assign(vals_.size(), T(0));
    // mark subgraph reachable from the loss
    std::vector<char> reach(nodes_.size(), 0);
    std::vector<int> stack{loss.id};
    reach[static_cast<size_t>(loss.id)] = 1;
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        for (int in : nodes_[static_cast<size_t>(id)].inputs)
            if (!reach[static_cast<size_t>(in)]) {
                reach[static_cast<size_t>(in)] = 1;
                stack.push_back(in);
            }
    }
    grads_[ln.off] = T(1);
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (reach[static_cast<size_t>(id)] && n.needs_grad && n.back) n.back();
    }
}

template class Tape<f32>;
template class Tape<f64>;

} // namespace dmg
