#include "dmg/text.hpp"

#include <algorithm>

#include "dmg/data.hpp"

namespace dmg {

// ---------------------------------------------------------------------------
// vocabulary
// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
    tokens_.push_back("PAD");
    for (const auto& n : path_names()) tokens_.push_back(n);
    for (const auto& n : gesture_names()) tokens_.push_back(n);
}

const Vocabulary& Vocabulary::instance() {
    static Vocabulary v;
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = std::find(tokens_.begin(), tokens_.end(), token);
    if (it == tokens_.end()) fail("vocabulary: unknown token '", token, "'");
    return static_cast<int>(it - tokens_.begin());
}

std::vector<int> Vocabulary::encode_padded(std::span<const std::string> words, int l_c) const {
    if (static_cast<int>(words.size()) > l_c)
        fail("vocabulary: ", words.size(), " tokens exceed sequence length ", l_c);
    std::vector<int> ids(static_cast<size_t>(l_c), 0); // PAD
    for (size_t i = 0; i < words.size(); ++i) ids[i] = id(words[i]);
    return ids;
}

// ---------------------------------------------------------------------------
// text encoder
// ---------------------------------------------------------------------------

void TextEncoder::init_params(ParameterStore& store, const TextEncoderConfig& cfg, Rng& rng) {
    store.create_normal("text.tok", {Vocabulary::instance().size(), cfg.d_c}, rng, 0.02);
    store.create_normal("text.pos", {cfg.l_c, cfg.d_c}, rng, 0.02);
    init_layernorm(store, "text.ln1", cfg.d_c);
    init_mha(store, "text.attn", cfg.d_c, rng);
    init_layernorm(store, "text.ln2", cfg.d_c);
    init_feed_forward(store, "text.ff", cfg.d_c, cfg.d_c * cfg.ff_mult, rng);
    init_layernorm(store, "text.lnf", cfg.d_c);
}

template <typename T>
Var TextEncoder::encode(Tape<T>& tp, ParamLoader<T>& P, const TextEncoderConfig& cfg,
                        std::span<const int> ids, int batch) {
    if (static_cast<int>(ids.size()) != batch * cfg.l_c)
        fail("text encode: ", ids.size(), " ids for batch ", batch, " x ", cfg.l_c);
    std::vector<int> idvec(ids.begin(), ids.end());
    Var tok = tp.embed(idvec, P("text.tok"));                    // [B*Lc, dc]
    Var pos = tp.tile_rows(P("text.pos"), batch);                // [B*Lc, dc]
    Var x = tp.reshape(tp.add(tok, pos), {batch, cfg.l_c, cfg.d_c});
    Var h = layer_norm3(tp, P, "text.ln1", x);
    std::array<Var, 1> kv{h};
    x = tp.add(x, mha(tp, P, "text.attn", h, kv, cfg.heads));
    x = tp.add(x, feed_forward(tp, P, "text.ff", layer_norm3(tp, P, "text.ln2", x)));
    return layer_norm3(tp, P, "text.lnf", x);
}

template Var TextEncoder::encode<f32>(Tape<f32>&, ParamLoader<f32>&, const TextEncoderConfig&,
                                      std::span<const int>, int);
template Var TextEncoder::encode<f64>(Tape<f64>&, ParamLoader<f64>&, const TextEncoderConfig&,
                                      std::span<const int>, int);

Array<f32> TextEncoder::encode_array(const ParameterStore& store, const TextEncoderConfig& cfg,
                                     std::span<const int> ids, int batch) {
    Tape<f32> tp;
    ParamLoader<f32> loader(tp, store, /*trainable=*/false);
    Var out = encode(tp, loader, cfg, ids, batch);
    return tp.val_array(out);
}

// ---------------------------------------------------------------------------
// partition & projectors
// ---------------------------------------------------------------------------

std::vector<Array<f32>> partition_embedding(const Array<f32>& c, int k_branches) {
    if (c.shape.size() != 2) fail("partition: expected [L_c,d_c], got ", shape_str(c.shape));
    int l_c = c.shape[0], d_c = c.shape[1];
    if (k_branches <= 0 || d_c % k_branches != 0)
        fail("partition: K=", k_branches, " does not divide d_c=", d_c);
    int w = d_c / k_branches;
    std::vector<Array<f32>> out;
    out.reserve(static_cast<size_t>(k_branches));
    for (int k = 0; k < k_branches; ++k) {
        Array<f32> sub({l_c, w});
        for (int r = 0; r < l_c; ++r)
            std::copy_n(c.data.begin() + static_cast<int64_t>(r) * d_c + k * w, w,
                        sub.data.begin() + static_cast<int64_t>(r) * w);
        out.push_back(std::move(sub));
    }
    return out;
}

template <typename T>
std::vector<Var> partition_var(Tape<T>& tp, Var c, int k_branches) {
    const Shape& s = tp.shape(c);
    if (s.size() != 3) fail("partition: expected [B,L_c,d_c], got ", shape_str(s));
    if (k_branches <= 0 || s[2] % k_branches != 0)
        fail("partition: K=", k_branches, " does not divide d_c=", s[2]);
    int w = s[2] / k_branches;
    std::vector<Var> out;
    for (int k = 0; k < k_branches; ++k) out.push_back(tp.slice(c, 2, k * w, w));
    return out;
}
template std::vector<Var> partition_var<f32>(Tape<f32>&, Var, int);
template std::vector<Var> partition_var<f64>(Tape<f64>&, Var, int);

void OssProjector::init_params(ParameterStore& store, const TextEncoderConfig& cfg, int k_branches,
                               Rng& rng) {
    if (cfg.d_c % k_branches != 0)
        fail("oss projector: K=", k_branches, " does not divide d_c=", cfg.d_c);
    init_linear(store, "ossproj", cfg.d_c / k_branches, cfg.d_c, rng, 0.08);
}

template <typename T>
Var OssProjector::project(Tape<T>& tp, ParamLoader<T>& P, Var sub) {
    return linear3(tp, P, "ossproj", sub);
}
template Var OssProjector::project<f32>(Tape<f32>&, ParamLoader<f32>&, Var);
template Var OssProjector::project<f64>(Tape<f64>&, ParamLoader<f64>&, Var);

void ScProjector::init_params(ParameterStore& store, const TextEncoderConfig& cfg, int k_branches,
                              Rng& rng) {
    if (cfg.d_c % k_branches != 0)
        fail("sc projector: K=", k_branches, " does not divide d_c=", cfg.d_c);
    init_linear(store, "scproj.up", cfg.d_c / k_branches, cfg.d_c, rng, 0.08);
    for (int blk = 0; blk < 2; ++blk) {
        std::string p = "scproj.blk" + std::to_string(blk);
        init_layernorm(store, p + ".ln1", cfg.d_c);
        init_mha(store, p + ".attn", cfg.d_c, rng);
        init_layernorm(store, p + ".ln2", cfg.d_c);
        init_feed_forward(store, p + ".ff", cfg.d_c, cfg.d_c * cfg.ff_mult, rng);
    }
}

template <typename T>
Var ScProjector::project(Tape<T>& tp, ParamLoader<T>& P, const TextEncoderConfig& cfg, Var sub) {
    Var x = linear3(tp, P, "scproj.up", sub);
    for (int blk = 0; blk < 2; ++blk) {
        std::string p = "scproj.blk" + std::to_string(blk);
        Var h = layer_norm3(tp, P, p + ".ln1", x);
        std::array<Var, 1> kv{h};
        x = tp.add(x, mha(tp, P, p + ".attn", h, kv, cfg.heads));
        x = tp.add(x, feed_forward(tp, P, p + ".ff", layer_norm3(tp, P, p + ".ln2", x)));
    }
    return x;
}
template Var ScProjector::project<f32>(Tape<f32>&, ParamLoader<f32>&, const TextEncoderConfig&,
                                       Var);
template Var ScProjector::project<f64>(Tape<f64>&, ParamLoader<f64>&, const TextEncoderConfig&,
                                       Var);

// ---------------------------------------------------------------------------
// orthogonality loss
// ---------------------------------------------------------------------------

template <typename T>
Var ortho_loss(Tape<T>& tp, std::span<const Var> branches, int* warnings) {
    if (branches.size() < 2) fail("ortho_loss: needs K >= 2 branches, got ", branches.size());
    const Shape& s0 = tp.shape(branches[0]);
    if (s0.size() != 3) fail("ortho_loss: expected [B,L_c,d_c], got ", shape_str(s0));
    int b = s0[0];
    int64_t flat = static_cast<int64_t>(s0[1]) * s0[2];
    std::vector<Var> flats;
    for (Var v : branches) {
        if (tp.shape(v) != s0)
            fail("ortho_loss: branch shape mismatch ", shape_str(tp.shape(v)), " vs ",
                 shape_str(s0));
        flats.push_back(tp.reshape(v, {b, static_cast<int>(flat)}));
    }
    auto row_dot = [&](Var x, Var y) { // [B]
        return tp.smul(tp.mean_axis(tp.mul(x, y), 1), static_cast<T>(flat));
    };
    const T eps = sizeof(T) == 4 ? T(1e-12) : T(1e-24);
    std::vector<Var> norms; // sqrt(||.||^2 + eps) per branch, [B]
    for (Var f : flats) norms.push_back(tp.sqrt(tp.add_scalar(row_dot(f, f), eps)));

    Var acc{-1};
    int pairs = 0;
    for (size_t i = 0; i < flats.size(); ++i)
        for (size_t j = i + 1; j < flats.size(); ++j) {
            Var cosine = tp.div(row_dot(flats[i], flats[j]), tp.mul(norms[i], norms[j]));
            // zero-norm guard: mask rows where either side is degenerate
            Array<T> mask({b});
            bool any_masked = false;
            auto ni = tp.val(norms[i]);
            auto nj = tp.val(norms[j]);
            for (int r = 0; r < b; ++r) {
                bool dead = ni[static_cast<size_t>(r)] < T(1e-5) || nj[static_cast<size_t>(r)] < T(1e-5);
                mask.data[static_cast<size_t>(r)] = dead ? T(0) : T(1);
                if (dead) {
                    any_masked = true;
                    if (warnings) ++*warnings;
                }
            }
            if (any_masked) cosine = tp.mul(cosine, tp.leaf(mask));
            Var sq = tp.mean(tp.mul(cosine, cosine));
            acc = pairs == 0 ? sq : tp.add(acc, sq);
            ++pairs;
        }
    return tp.smul(acc, T(1) / static_cast<T>(pairs));
}
template Var ortho_loss<f32>(Tape<f32>&, std::span<const Var>, int*);
template Var ortho_loss<f64>(Tape<f64>&, std::span<const Var>, int*);

} // namespace dmg
