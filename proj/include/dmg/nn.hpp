#pragma once

#include <string>

#include "dmg/params.hpp"
#include "dmg/tensor.hpp"

namespace dmg {

enum class Aggregation { Mean, Sum };

// ---------------------------------------------------------------------------
// parameter initialization (weights N(0, 0.02), biases zero, LN gain one)
// ---------------------------------------------------------------------------

inline void init_linear(ParameterStore& store, const std::string& prefix, int in, int out,
                        Rng& rng, f64 stddev = 0.02) {
    store.create_normal(prefix + ".w", {in, out}, rng, stddev);
    store.create_zeros(prefix + ".b", {out});
}

inline void init_layernorm(ParameterStore& store, const std::string& prefix, int d) {
    store.create_const(prefix + ".g", {d}, 1.0f);
    store.create_zeros(prefix + ".b", {d});
}

inline void init_mha(ParameterStore& store, const std::string& prefix, int d, Rng& rng) {
    init_linear(store, prefix + ".q", d, d, rng);
    init_linear(store, prefix + ".k", d, d, rng);
    init_linear(store, prefix + ".v", d, d, rng);
    init_linear(store, prefix + ".o", d, d, rng);
}

inline void init_feed_forward(ParameterStore& store, const std::string& prefix, int d, int hidden,
                              Rng& rng) {
    init_linear(store, prefix + ".f1", d, hidden, rng);
    init_linear(store, prefix + ".f2", hidden, d, rng);
}

// ---------------------------------------------------------------------------
// forward blocks ([B, T, D] activations)
// ---------------------------------------------------------------------------

template <typename T>
Var linear3(Tape<T>& tp, ParamLoader<T>& P, const std::string& prefix, Var x) {
    const Shape& s = tp.shape(x);
    Var flat = tp.reshape(x, {s[0] * s[1], s[2]});
    Var y = tp.linear(flat, P(prefix + ".w"), P(prefix + ".b"));
    return tp.reshape(y, {s[0], s[1], tp.shape(y)[1]});
}

template <typename T>
Var layer_norm3(Tape<T>& tp, ParamLoader<T>& P, const std::string& prefix, Var x) {
    return tp.layer_norm(x, P(prefix + ".g"), P(prefix + ".b"));
}

// Multi-head attention; queries from q_in, keys/values from each entry of
// kv_ins in turn with shared projections, outputs aggregated. A single
// kv entry is standard (self or cross) attention and takes the exact same
// code path, so the one-branch case is bit-identical to plain attention.
template <typename T>
Var mha(Tape<T>& tp, ParamLoader<T>& P, const std::string& prefix, Var q_in,
        std::span<const Var> kv_ins, int heads, Aggregation agg = Aggregation::Mean) {
    if (kv_ins.empty()) fail("mha: empty condition set");
    const Shape& sq = tp.shape(q_in);
    int b = sq[0], tq = sq[1], d = sq[2];
    if (d % heads != 0) fail("mha: width ", d, " not divisible by heads ", heads);
    int dh = d / heads;

    Var q = linear3(tp, P, prefix + ".q", q_in); // [B,Tq,D]
    Var qh = tp.reshape(tp.permute(tp.reshape(q, {b, tq, heads, dh}), {0, 2, 1, 3}),
                        {b * heads, tq, dh});

    int d_kv = tp.shape(P(prefix + ".k.w"))[0]; // kv width set by the projection
    Var out{-1};
    for (size_t i = 0; i < kv_ins.size(); ++i) {
        const Shape& sk = tp.shape(kv_ins[i]);
        if (sk.size() != 3 || sk[0] != b || sk[2] != d_kv)
            fail("mha: kv shape ", shape_str(sk), " incompatible with queries ", shape_str(sq));
        int tk = sk[1];
        Var k = linear3(tp, P, prefix + ".k", kv_ins[i]);
        Var v = linear3(tp, P, prefix + ".v", kv_ins[i]);
        Var kt = tp.reshape(tp.permute(tp.reshape(k, {b, tk, heads, dh}), {0, 2, 3, 1}),
                            {b * heads, dh, tk});
        Var vh = tp.reshape(tp.permute(tp.reshape(v, {b, tk, heads, dh}), {0, 2, 1, 3}),
                            {b * heads, tk, dh});
        Var scores = tp.smul(tp.bmm(qh, kt), T(1) / std::sqrt(static_cast<T>(dh)));
        Var ctx = tp.bmm(tp.softmax(scores), vh); // [B*H, Tq, Dh]
        Var merged = tp.reshape(tp.permute(tp.reshape(ctx, {b, heads, tq, dh}), {0, 2, 1, 3}),
                                {b, tq, d});
        Var branch = linear3(tp, P, prefix + ".o", merged);
        out = i == 0 ? branch : tp.add(out, branch);
    }
    if (agg == Aggregation::Mean && kv_ins.size() > 1)
        out = tp.smul(out, T(1) / static_cast<T>(kv_ins.size()));
    return out;
}

template <typename T>
Var feed_forward(Tape<T>& tp, ParamLoader<T>& P, const std::string& prefix, Var x) {
    Var h = tp.gelu(linear3(tp, P, prefix + ".f1", x));
    return linear3(tp, P, prefix + ".f2", h);
}

} // namespace dmg
