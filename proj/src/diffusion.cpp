#include "dmg/diffusion.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace dmg {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// schedule
// ---------------------------------------------------------------------------

NoiseSchedule make_schedule(int t_steps, f64 beta_1, f64 beta_t) {
    if (t_steps < 2) fail("make_schedule: T must be >= 2, got ", t_steps);
    if (!(beta_1 > 0.0 && beta_1 <= beta_t && beta_t < 1.0))
        fail("make_schedule: need 0 < beta_1 <= beta_T < 1, got ", beta_1, ", ", beta_t);
    std::vector<f64> betas(static_cast<size_t>(t_steps));
    for (int t = 0; t < t_steps; ++t)
        betas[static_cast<size_t>(t)] = beta_1 + (beta_t - beta_1) * t / (t_steps - 1);
    return schedule_from_betas(std::move(betas));
}

NoiseSchedule schedule_from_betas(std::vector<f64> betas) {
    NoiseSchedule s;
    s.steps = static_cast<int>(betas.size());
    if (s.steps < 1) fail("schedule_from_betas: empty");
    s.beta = std::move(betas);
    s.alpha.resize(s.beta.size());
    s.alpha_bar.resize(s.beta.size());
    s.beta_tilde.resize(s.beta.size());
    s.eta.resize(s.beta.size());
    f64 prod = 1.0;
    for (size_t i = 0; i < s.beta.size(); ++i) {
        if (!(s.beta[i] > 0.0 && s.beta[i] < 1.0))
            fail("schedule: beta out of (0,1) at t=", i + 1);
        s.alpha[i] = 1.0 - s.beta[i];
        f64 prev_bar = prod;
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
        if (i > 0 && !(s.alpha_bar[i] < s.alpha_bar[i - 1]))
            fail("schedule: alpha_bar not strictly decreasing at t=", i + 1);
        s.beta_tilde[i] = i == 0 ? s.beta[0] : s.beta[i] * (1.0 - prev_bar) / (1.0 - s.alpha_bar[i]);
        s.eta[i] = (1.0 - s.alpha[i]) / std::sqrt(1.0 - s.alpha_bar[i]);
    }
    return s;
}

RespacedSchedule respace(const NoiseSchedule& full, int steps) {
    if (steps < 2 || steps > full.steps)
        fail("respace: steps must be in [2, ", full.steps, "], got ", steps);
    RespacedSchedule out;
    out.model_t.resize(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        f64 pos = 1.0 + static_cast<f64>(i) * (full.steps - 1) / (steps - 1);
        out.model_t[static_cast<size_t>(i)] = static_cast<int>(std::lround(pos));
    }
    for (int i = 1; i < steps; ++i)
        if (out.model_t[static_cast<size_t>(i)] <= out.model_t[static_cast<size_t>(i) - 1])
            fail("respace: non-increasing timestep subsequence");
    // compact schedule from the selected alpha_bar values
    NoiseSchedule s;
    s.steps = steps;
    s.beta.resize(static_cast<size_t>(steps));
    s.alpha.resize(static_cast<size_t>(steps));
    s.alpha_bar.resize(static_cast<size_t>(steps));
    s.beta_tilde.resize(static_cast<size_t>(steps));
    s.eta.resize(static_cast<size_t>(steps));
    f64 prev_bar = 1.0;
    for (int i = 0; i < steps; ++i) {
        f64 bar = full.alpha_bar[static_cast<size_t>(out.model_t[static_cast<size_t>(i)]) - 1];
        s.alpha_bar[static_cast<size_t>(i)] = bar;
        s.alpha[static_cast<size_t>(i)] = bar / prev_bar;
        s.beta[static_cast<size_t>(i)] = 1.0 - s.alpha[static_cast<size_t>(i)];
        s.beta_tilde[static_cast<size_t>(i)] =
            i == 0 ? s.beta[0] : s.beta[static_cast<size_t>(i)] * (1.0 - prev_bar) / (1.0 - bar);
        s.eta[static_cast<size_t>(i)] =
            (1.0 - s.alpha[static_cast<size_t>(i)]) / std::sqrt(1.0 - bar);
        prev_bar = bar;
    }
    out.sched = std::move(s);
    return out;
}

Array<f32> q_sample(const Array<f32>& z0, int t, const Array<f32>& eps,
                    const NoiseSchedule& sched) {
    if (z0.shape != eps.shape)
        fail("q_sample: shape mismatch ", shape_str(z0.shape), " vs ", shape_str(eps.shape));
    if (t < 1 || t > sched.steps) fail("q_sample: t=", t, " outside [1,", sched.steps, "]");
    f64 bar = sched.alpha_bar[static_cast<size_t>(t) - 1];
    f32 a = static_cast<f32>(std::sqrt(bar));
    f32 b = static_cast<f32>(std::sqrt(1.0 - bar));
    Array<f32> out(z0.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * z0.data[i] + b * eps.data[i];
    return out;
}

// ---------------------------------------------------------------------------
// denoiser
// ---------------------------------------------------------------------------

void init_denoiser(ParameterStore& store, const DenoiserConfig& cfg, Rng& rng) {
    if (cfg.width % cfg.heads != 0)
        fail("denoiser: width ", cfg.width, " not divisible by heads ", cfg.heads);
    init_linear(store, "den.in", cfg.d_z, cfg.width, rng, 0.08);
    init_linear(store, "den.temb1", cfg.temb_dim, cfg.width, rng, 0.02);
    init_linear(store, "den.temb2", cfg.width, cfg.width, rng, 0.02);
    for (int b = 0; b < cfg.blocks; ++b) {
        std::string p = "den.blk" + std::to_string(b);
        init_layernorm(store, p + ".ln1", cfg.width);
        init_mha(store, p + ".attn", cfg.width, rng);
        init_layernorm(store, p + ".ln2", cfg.width);
        // cross-attention keys/values come from d_c-wide text embeddings
        init_linear(store, p + ".xattn.q", cfg.width, cfg.width, rng);
        init_linear(store, p + ".xattn.k", cfg.d_c, cfg.width, rng);
        init_linear(store, p + ".xattn.v", cfg.d_c, cfg.width, rng);
        init_linear(store, p + ".xattn.o", cfg.width, cfg.width, rng);
        init_layernorm(store, p + ".ln3", cfg.width);
        init_feed_forward(store, p + ".ff", cfg.width, 4 * cfg.width, rng);
    }
    init_layernorm(store, "den.lnf", cfg.width);
    init_linear(store, "den.out", cfg.width, cfg.d_z, rng, 0.02);
}

template <typename T>
Var denoiser_forward(Tape<T>& tp, ParamLoader<T>& P, const DenoiserConfig& cfg, Var z_t,
                     std::span<const Var> conds, std::span<const int64_t> ts, Aggregation agg) {
    const Shape& s = tp.shape(z_t);
    if (s.size() != 3 || s[1] != cfg.l_z || s[2] != cfg.d_z)
        fail("denoiser: expected [B,", cfg.l_z, ",", cfg.d_z, "], got ", shape_str(s));
    int b = s[0];
    if (static_cast<int>(ts.size()) != b)
        fail("denoiser: ", ts.size(), " timesteps for batch ", b);
    if (conds.empty()) fail("denoiser: empty condition set");
    for (Var c : conds) {
        const Shape sc = tp.shape(c);
        if (sc.size() != 3 || sc[0] != b || sc[1] != cfg.l_c || sc[2] != cfg.d_c)
            fail("denoiser: condition shape ", shape_str(sc), " != [", b, ",", cfg.l_c, ",",
                 cfg.d_c, "]");
    }

    Var x = linear3(tp, P, "den.in", z_t); // [B,Lz,W]
    Var te = tp.timestep_embed(ts, cfg.temb_dim);
    te = tp.linear(tp.gelu(tp.linear(te, P("den.temb1.w"), P("den.temb1.b"))), P("den.temb2.w"),
                   P("den.temb2.b"));
    Var te_rows = tp.repeat_interleave_rows(te, cfg.l_z); // [B*Lz, W]
    x = tp.reshape(tp.add(tp.reshape(x, {b * cfg.l_z, cfg.width}), te_rows),
                   {b, cfg.l_z, cfg.width});

    for (int blk = 0; blk < cfg.blocks; ++blk) {
        std::string p = "den.blk" + std::to_string(blk);
        Var h = layer_norm3(tp, P, p + ".ln1", x);
        std::array<Var, 1> self_kv{h};
        x = tp.add(x, mha(tp, P, p + ".attn", h, self_kv, cfg.heads));
        x = tp.add(x, mha(tp, P, p + ".xattn", layer_norm3(tp, P, p + ".ln2", x), conds, cfg.heads,
                          agg));
        x = tp.add(x, feed_forward(tp, P, p + ".ff", layer_norm3(tp, P, p + ".ln3", x)));
    }
    x = layer_norm3(tp, P, "den.lnf", x);
    return linear3(tp, P, "den.out", x);
}
template Var denoiser_forward<f32>(Tape<f32>&, ParamLoader<f32>&, const DenoiserConfig&, Var,
                                   std::span<const Var>, std::span<const int64_t>, Aggregation);
template Var denoiser_forward<f64>(Tape<f64>&, ParamLoader<f64>&, const DenoiserConfig&, Var,
                                   std::span<const Var>, std::span<const int64_t>, Aggregation);

template <typename T>
Var denoise_eps(Tape<T>& tp, ParamLoader<T>& P, const DenoiserConfig& cfg, Var z_t, Var cond,
                std::span<const int64_t> ts) {
    std::array<Var, 1> conds{cond};
    return denoiser_forward(tp, P, cfg, z_t, conds, ts, Aggregation::Mean);
}
template Var denoise_eps<f32>(Tape<f32>&, ParamLoader<f32>&, const DenoiserConfig&, Var, Var,
                              std::span<const int64_t>);
template Var denoise_eps<f64>(Tape<f64>&, ParamLoader<f64>&, const DenoiserConfig&, Var, Var,
                              std::span<const int64_t>);

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Exp: return "exp";
        case Variant::Oss: return "oss";
        case Variant::Sc: return "sc";
    }
    return "?";
}
const char* mode_name(Mode m) { return m == Mode::Latent ? "latent" : "semantic"; }

Variant variant_from_name(const std::string& s) {
    if (s == "exp") return Variant::Exp;
    if (s == "oss") return Variant::Oss;
    if (s == "sc") return Variant::Sc;
    fail("unknown variant '", s, "' (expected exp|oss|sc)");
}
Mode mode_from_name(const std::string& s) {
    if (s == "latent") return Mode::Latent;
    if (s == "semantic") return Mode::Semantic;
    fail("unknown mode '", s, "' (expected latent|semantic)");
}

f32 default_alpha_o(Mode mode) { return mode == Mode::Latent ? 2.0f : 1.0f; }

template <typename T>
Var compose_eps(Tape<T>& tp, ParamLoader<T>& P, const DenoiserConfig& cfg, Var z_t,
                std::span<const Var> conds, std::span<const int64_t> ts, Mode mode,
                Aggregation agg) {
    if (conds.empty()) fail("compose_eps: empty condition set");
    if (mode == Mode::Semantic) return denoiser_forward(tp, P, cfg, z_t, conds, ts, agg);
    if (conds.size() == 1) return denoise_eps(tp, P, cfg, z_t, conds[0], ts);
    // K independent branch forwards share every weight, so they run as one
    // forward over a K-times stacked batch; rows are independent through
    // every layer, making the slices bit-identical to separate passes.
    int k = static_cast<int>(conds.size());
    int b = tp.shape(z_t)[0];
    Var z_big = tp.reshape(tp.tile_rows(tp.reshape(z_t, {b, cfg.l_z * cfg.d_z}), k),
                           {k * b, cfg.l_z, cfg.d_z});
    Var cond_big = tp.concat(conds, 0);
    std::vector<int64_t> ts_big;
    ts_big.reserve(static_cast<size_t>(k) * ts.size());
    for (int kk = 0; kk < k; ++kk) ts_big.insert(ts_big.end(), ts.begin(), ts.end());
    std::array<Var, 1> one_cond{cond_big};
    Var big = denoiser_forward(tp, P, cfg, z_big, one_cond, ts_big, agg);
    Var out{-1};
    for (int kk = 0; kk < k; ++kk) {
        Var e = tp.slice(big, 0, kk * b, b);
        out = kk == 0 ? e : tp.add(out, e);
    }
    if (agg == Aggregation::Mean) out = tp.smul(out, T(1) / static_cast<T>(k));
    return out;
}
template Var compose_eps<f32>(Tape<f32>&, ParamLoader<f32>&, const DenoiserConfig&, Var,
                              std::span<const Var>, std::span<const int64_t>, Mode, Aggregation);
template Var compose_eps<f64>(Tape<f64>&, ParamLoader<f64>&, const DenoiserConfig&, Var,
                              std::span<const Var>, std::span<const int64_t>, Mode, Aggregation);

// ---------------------------------------------------------------------------
// condition library
// ---------------------------------------------------------------------------

ConditionLibrary::ConditionLibrary(const ParameterStore& text_store, const TextEncoderConfig& cfg)
    : cfg_(cfg) {
    const auto& vocab = Vocabulary::instance();
    std::vector<std::pair<std::string, std::vector<std::string>>> entries;
    for (const auto& n : path_names()) entries.push_back({n, {n}});
    for (const auto& n : gesture_names()) entries.push_back({n, {n}});
    for (const auto& [p, g] : all_pairs()) entries.push_back({p + "+" + g, {p, g}});

    std::vector<int> ids;
    for (const auto& [key, words] : entries) {
        auto row = vocab.encode_padded(words, cfg.l_c);
        ids.insert(ids.end(), row.begin(), row.end());
    }
    Array<f32> all =
        TextEncoder::encode_array(text_store, cfg, ids, static_cast<int>(entries.size()));
    int64_t stride = static_cast<int64_t>(cfg.l_c) * cfg.d_c;
    for (size_t i = 0; i < entries.size(); ++i) {
        Array<f32> emb({cfg.l_c, cfg.d_c});
        std::copy_n(all.data.begin() + static_cast<int64_t>(i) * stride, stride, emb.data.begin());
        by_key_.emplace(entries[i].first, std::move(emb));
    }
}

const Array<f32>& ConditionLibrary::concept_emb(const std::string& name) const {
    auto it = by_key_.find(name);
    if (it == by_key_.end()) fail("condition library: unknown concept '", name, "'");
    return it->second;
}
const Array<f32>& ConditionLibrary::holistic(const std::string& path,
                                             const std::string& gesture) const {
    auto it = by_key_.find(path + "+" + gesture);
    if (it == by_key_.end()) fail("condition library: unknown pair (", path, ", ", gesture, ")");
    return it->second;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

DiffusionTrainData prepare_train_data(const Dataset& ds, const VaeConfig& vae_cfg,
                                      const ParameterStore& vae_store,
                                      const DenoiserConfig& den_cfg) {
    if (vae_cfg.l_z() != den_cfg.l_z || vae_cfg.d_z != den_cfg.d_z)
        fail("prepare_train_data: latent layout mismatch vae [", vae_cfg.l_z(), ",", vae_cfg.d_z,
             "] vs denoiser [", den_cfg.l_z, ",", den_cfg.d_z, "]");
    DiffusionTrainData out;
    int n = static_cast<int>(ds.train.size());
    out.latents.reserve(static_cast<size_t>(n));
    out.labels.reserve(static_cast<size_t>(n));
    const int chunk = 256;
    for (int start = 0; start < n; start += chunk) {
        int b = std::min(chunk, n - start);
        Array<f32> xb({b, kFrames, kChannels});
        for (int i = 0; i < b; ++i) {
            Array<f32> nm = ds.normalized(ds.train[static_cast<size_t>(start + i)]);
            std::copy_n(nm.data.begin(), nm.data.size(),
                        xb.data.begin() + static_cast<int64_t>(i) * kFrames * kChannels);
        }
        Array<f32> mu = vae_encode_mu(vae_store, vae_cfg, xb);
        int64_t stride = static_cast<int64_t>(den_cfg.l_z) * den_cfg.d_z;
        for (int i = 0; i < b; ++i) {
            Array<f32> z({den_cfg.l_z, den_cfg.d_z});
            std::copy_n(mu.data.begin() + i * stride, stride, z.data.begin());
            out.latents.push_back(std::move(z));
        }
    }
    for (const auto& lab : ds.train_labels) out.labels.emplace_back(lab.path, lab.gesture);
    return out;
}

namespace {

// Stack per-sample [L_c, d_c] embeddings into a [B, L_c, d_c] leaf payload.
Array<f32> stack_conditions(const std::vector<const Array<f32>*>& rows) {
    int b = static_cast<int>(rows.size());
    int lc = rows[0]->shape[0], dc = rows[0]->shape[1];
    Array<f32> out({b, lc, dc});
    int64_t stride = static_cast<int64_t>(lc) * dc;
    for (int i = 0; i < b; ++i)
        std::copy_n(rows[static_cast<size_t>(i)]->data.begin(), stride,
                    out.data.begin() + i * stride);
    return out;
}

// Column slice [branch*w, (branch+1)*w) of each row, stacked.
Array<f32> stack_partition(const std::vector<const Array<f32>*>& rows, int k, int branch) {
    int b = static_cast<int>(rows.size());
    int lc = rows[0]->shape[0], dc = rows[0]->shape[1];
    int w = dc / k;
    Array<f32> out({b, lc, w});
    for (int i = 0; i < b; ++i)
        for (int r = 0; r < lc; ++r)
            std::copy_n(rows[static_cast<size_t>(i)]->data.begin() + static_cast<int64_t>(r) * dc +
                            branch * w,
                        w, out.data.begin() + (static_cast<int64_t>(i) * lc + r) * w);
    return out;
}

} // namespace

StepLoss diffusion_train_step(DiffusionModel& model, const DiffusionTrainData& data,
                              const ConditionLibrary& lib, const NoiseSchedule& sched,
                              const DiffusionTrainConfig& cfg, Rng& rng) {
    const VariantConfig& vc = model.variant;
    const DenoiserConfig& dc = model.den;
    int b = cfg.batch;
    int n = static_cast<int>(data.latents.size());
    if (n == 0) fail("diffusion_train_step: no training latents");
    if (vc.variant == Variant::Exp && vc.k != 2)
        fail("exp variant trains on 2 decomposed labels; K=", vc.k, " unsupported");
    if (vc.k > 0 && dc.d_c % vc.k != 0)
        fail("variant: K=", vc.k, " does not divide d_c=", dc.d_c);

    // batch assembly (plain arrays; everything below the loss is frozen data)
    Array<f32> z_t({b, dc.l_z, dc.d_z});
    Array<f32> eps({b, dc.l_z, dc.d_z});
    std::vector<int64_t> ts(static_cast<size_t>(b));
    std::vector<const Array<f32>*> holistic_rows(static_cast<size_t>(b));
    std::vector<const Array<f32>*> path_rows(static_cast<size_t>(b));
    std::vector<const Array<f32>*> gesture_rows(static_cast<size_t>(b));
    std::vector<std::vector<const Array<f32>*>> branch_rows(
        static_cast<size_t>(vc.k), std::vector<const Array<f32>*>(static_cast<size_t>(b)));

    int64_t zstride = static_cast<int64_t>(dc.l_z) * dc.d_z;
    for (int i = 0; i < b; ++i) {
        int idx = static_cast<int>(rng.uniform_int(0, n - 1));
        const auto& [path, gesture] = data.labels[static_cast<size_t>(idx)];
        ts[static_cast<size_t>(i)] = rng.uniform_int(1, sched.steps);
        Array<f32> e({dc.l_z, dc.d_z});
        rng.fill_normal(std::span<f32>(e.data));
        Array<f32> zt = q_sample(data.latents[static_cast<size_t>(idx)],
                                 static_cast<int>(ts[static_cast<size_t>(i)]), e, sched);
        std::copy_n(e.data.begin(), zstride, eps.data.begin() + i * zstride);
        std::copy_n(zt.data.begin(), zstride, z_t.data.begin() + i * zstride);

        holistic_rows[static_cast<size_t>(i)] = &lib.holistic(path, gesture);
        path_rows[static_cast<size_t>(i)] = &lib.concept_emb(path);
        gesture_rows[static_cast<size_t>(i)] = &lib.concept_emb(gesture);
        if (vc.variant == Variant::Exp) {
            if (rng.bernoulli(vc.tau)) {
                for (int k = 0; k < vc.k; ++k)
                    branch_rows[static_cast<size_t>(k)][static_cast<size_t>(i)] =
                        holistic_rows[static_cast<size_t>(i)];
            } else {
                branch_rows[0][static_cast<size_t>(i)] = path_rows[static_cast<size_t>(i)];
                branch_rows[1][static_cast<size_t>(i)] = gesture_rows[static_cast<size_t>(i)];
            }
        }
    }

    Tape<f32> tp;
    ParamLoader<f32> P(tp, model.params, /*trainable=*/true);
    Var z_leaf = tp.leaf(z_t);
    Var eps_leaf = tp.leaf(eps);

    StepLoss out;
    Var total{-1};
    if (vc.variant == Variant::Exp) {
        std::vector<Var> conds;
        for (int k = 0; k < vc.k; ++k)
            conds.push_back(tp.leaf(stack_conditions(branch_rows[static_cast<size_t>(k)])));
        Var pred = compose_eps(tp, P, dc, z_leaf, conds, ts, vc.mode, vc.agg);
        Var mse_v = tp.mse(eps_leaf, pred);
        out.mse = tp.scalar(mse_v);
        total = mse_v;
    } else {
        // OSS / SC: partition the frozen holistic embedding, project on-tape
        std::vector<Var> projected;
        for (int k = 0; k < vc.k; ++k) {
            Var sub = tp.leaf(stack_partition(holistic_rows, vc.k, k));
            projected.push_back(vc.variant == Variant::Oss
                                    ? OssProjector::project(tp, P, sub)
                                    : ScProjector::project(tp, P, model.text, sub));
        }
        Var pred = compose_eps(tp, P, dc, z_leaf,
                               std::span<const Var>(projected.data(), projected.size()), ts,
                               vc.mode, vc.agg);
        Var mse_v = tp.mse(eps_leaf, pred);
        out.mse = tp.scalar(mse_v);
        total = mse_v;
        if (vc.alpha_o > 0.0f) {
            Var ortho =
                ortho_loss<f32>(tp, std::span<const Var>(projected.data(), projected.size()));
            out.ortho = tp.scalar(ortho);
            total = tp.add(total, tp.smul(ortho, vc.alpha_o));
        }
        if (vc.variant == Variant::Sc && vc.k == 2) {
            // semantic consistency: branch 0 <- path concept, branch 1 <- gesture
            std::array<Var, 2> proj{projected[0], projected[1]};
            std::array<Var, 2> target{tp.leaf(stack_conditions(path_rows)),
                                      tp.leaf(stack_conditions(gesture_rows))};
            Var proj_cat = tp.concat(std::span<const Var>(proj.data(), 2), 2);
            Var target_cat = tp.concat(std::span<const Var>(target.data(), 2), 2);
            Var sc_v = tp.smooth_l1(target_cat, proj_cat);
            out.sc = tp.scalar(sc_v);
            total = tp.add(total, tp.smul(sc_v, vc.alpha_sc));
        }
    }

    out.total = tp.scalar(total);
    if (!std::isfinite(out.total)) fail("diffusion_train_step: non-finite loss");

    tp.backward(total);
    AdamwConfig opt;
    opt.lr = model.params.step() >= cfg.lr_decay_after ? cfg.lr_final : cfg.lr;
    model.params.adamw_step(P.grads(), opt);
    return out;
}

DiffusionModel train_diffusion(const Dataset& ds, const VaeConfig& vae_cfg,
                               const ParameterStore& vae_store, const TextEncoderConfig& text_cfg,
                               const ParameterStore& text_store, const DiffusionTrainConfig& cfg,
                               const std::string& log_path) {
    DiffusionModel model;
    model.den = cfg.den;
    model.den.l_z = vae_cfg.l_z();
    model.den.d_z = vae_cfg.d_z;
    model.den.l_c = text_cfg.l_c;
    model.den.d_c = text_cfg.d_c;
    model.text = text_cfg;
    model.variant = cfg.variant;
    model.t_steps = cfg.t_steps;
    model.beta_1 = cfg.beta_1;
    model.beta_t = cfg.beta_t;

    Rng rng(cfg.seed);
    init_denoiser(model.params, model.den, rng);
    if (cfg.variant.variant == Variant::Oss)
        OssProjector::init_params(model.params, text_cfg, cfg.variant.k, rng);
    else if (cfg.variant.variant == Variant::Sc)
        ScProjector::init_params(model.params, text_cfg, cfg.variant.k, rng);

    NoiseSchedule sched = model.schedule();
    ConditionLibrary lib(text_store, text_cfg);
    DiffusionTrainData data = prepare_train_data(ds, vae_cfg, vae_store, model.den);

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::trunc);
        if (!log) fail("train_diffusion: cannot open log '", log_path, "'");
    }

    for (int step = 1; step <= cfg.steps; ++step) {
        StepLoss loss = diffusion_train_step(model, data, lib, sched, cfg, rng);
        if (log && (step % cfg.log_every == 0 || step == 1))
            log << json{{"step", step},
                        {"total", loss.total},
                        {"mse", loss.mse},
                        {"ortho", loss.ortho},
                        {"sc", loss.sc}}
                       .dump()
                << std::endl;
    }
    return model;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

void save_diffusion(const DiffusionModel& model, const std::string& path) {
    model.params.save(path);
    json meta;
    meta["variant"] = variant_name(model.variant.variant);
    meta["mode"] = mode_name(model.variant.mode);
    meta["k"] = model.variant.k;
    meta["tau"] = model.variant.tau;
    meta["alpha_o"] = model.variant.alpha_o;
    meta["alpha_sc"] = model.variant.alpha_sc;
    meta["agg"] = model.variant.agg == Aggregation::Mean ? "mean" : "sum";
    meta["t_steps"] = model.t_steps;
    meta["beta_1"] = model.beta_1;
    meta["beta_t"] = model.beta_t;
    meta["den"] = {{"blocks", model.den.blocks}, {"width", model.den.width},
                   {"heads", model.den.heads},   {"temb_dim", model.den.temb_dim},
                   {"l_z", model.den.l_z},       {"d_z", model.den.d_z},
                   {"l_c", model.den.l_c},       {"d_c", model.den.d_c}};
    meta["text"] = {{"l_c", model.text.l_c},
                    {"d_c", model.text.d_c},
                    {"heads", model.text.heads},
                    {"ff_mult", model.text.ff_mult}};
    std::ofstream f(path + ".json", std::ios::trunc);
    if (!f) fail("save_diffusion: cannot write '", path, ".json'");
    f << meta.dump(2) << '\n';
}

DiffusionModel load_diffusion(const std::string& path) {
    std::ifstream f(path + ".json");
    if (!f) throw FileNotFound(path + ".json");
    json meta = json::parse(f);
    DiffusionModel model;
    model.variant.variant = variant_from_name(meta.at("variant").get<std::string>());
    model.variant.mode = mode_from_name(meta.at("mode").get<std::string>());
    model.variant.k = meta.at("k").get<int>();
    model.variant.tau = meta.at("tau").get<f32>();
    model.variant.alpha_o = meta.at("alpha_o").get<f32>();
    model.variant.alpha_sc = meta.at("alpha_sc").get<f32>();
    model.variant.agg =
        meta.at("agg").get<std::string>() == "sum" ? Aggregation::Sum : Aggregation::Mean;
    model.t_steps = meta.at("t_steps").get<int>();
    model.beta_1 = meta.at("beta_1").get<f64>();
    model.beta_t = meta.at("beta_t").get<f64>();
    const auto& d = meta.at("den");
    model.den = {d.at("blocks").get<int>(), d.at("width").get<int>(),  d.at("heads").get<int>(),
                 d.at("temb_dim").get<int>(), d.at("l_z").get<int>(),  d.at("d_z").get<int>(),
                 d.at("l_c").get<int>(),     d.at("d_c").get<int>()};
    const auto& t = meta.at("text");
    model.text = {t.at("l_c").get<int>(), t.at("d_c").get<int>(), t.at("heads").get<int>(),
                  t.at("ff_mult").get<int>()};
    model.params.load(path);
    return model;
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

std::vector<Array<f32>> native_condition(const DiffusionModel& model, const ConditionLibrary& lib,
                                         const std::string& path, const std::string& gesture) {
    if (model.variant.variant == Variant::Exp) {
        auto [p, g] = decompose_label(path, gesture);
        return {lib.concept_emb(p), lib.concept_emb(g)};
    }
    // OSS/SC: partition the holistic embedding, run the projector
    const Array<f32>& hol = lib.holistic(path, gesture);
    auto subs = partition_embedding(hol, model.variant.k);
    std::vector<Array<f32>> out;
    Tape<f32> tp;
    ParamLoader<f32> P(tp, model.params, false);
    for (const auto& sub : subs) {
        Array<f32> batched({1, sub.shape[0], sub.shape[1]});
        batched.data = sub.data;
        Var v = tp.leaf(batched);
        Var proj = model.variant.variant == Variant::Oss
                       ? OssProjector::project(tp, P, v)
                       : ScProjector::project(tp, P, model.text, v);
        Array<f32> arr = tp.val_array(proj);
        out.push_back(Array<f32>({arr.shape[1], arr.shape[2]}, std::move(arr.data)));
    }
    return out;
}

std::vector<Array<f32>> texts_condition(const DiffusionModel& model, const ConditionLibrary& lib,
                                        const std::vector<std::string>& texts) {
    if (texts.empty()) fail("texts_condition: no texts given");
    if (static_cast<int>(texts.size()) > model.variant.k)
        fail("texts_condition: ", texts.size(), " texts exceed K=", model.variant.k);
    std::vector<Array<f32>> out;
    if (texts.size() == 1) {
        // single text duplicated to the required K conditions
        for (int k = 0; k < model.variant.k; ++k) out.push_back(lib.concept_emb(texts[0]));
    } else {
        for (const auto& t : texts) out.push_back(lib.concept_emb(t));
    }
    return out;
}

std::vector<Array<f32>> reverse_chains(const DiffusionModel& model,
                                       std::span<const Array<f32>> cond_branches,
                                       std::span<Rng> rngs, int steps) {
    int n = static_cast<int>(rngs.size());
    const DenoiserConfig& dc = model.den;
    if (cond_branches.empty()) fail("reverse_chains: empty condition set");
    for (const auto& cb : cond_branches)
        if (cb.shape != Shape{n, dc.l_c, dc.d_c})
            fail("reverse_chains: condition branch shape ", shape_str(cb.shape), " != [", n, ",",
                 dc.l_c, ",", dc.d_c, "]");
    NoiseSchedule full = model.schedule();
    if (steps > full.steps) fail("reverse_chains: steps=", steps, " > T=", full.steps);
    RespacedSchedule rs = respace(full, steps);

    int64_t zstride = static_cast<int64_t>(dc.l_z) * dc.d_z;
    Array<f32> z({n, dc.l_z, dc.d_z});
    for (int i = 0; i < n; ++i)
        rngs[static_cast<size_t>(i)].fill_normal(
            std::span<f32>(z.data.data() + i * zstride, static_cast<size_t>(zstride)));

    Array<f32> noise({dc.l_z, dc.d_z});
    for (int i = steps - 1; i >= 0; --i) {
        std::vector<int64_t> ts(static_cast<size_t>(n),
                                static_cast<int64_t>(rs.model_t[static_cast<size_t>(i)]));
        Tape<f32> tp;
        ParamLoader<f32> P(tp, model.params, false);
        std::vector<Var> conds;
        conds.reserve(cond_branches.size());
        for (const auto& cb : cond_branches) conds.push_back(tp.leaf(cb));
        Var pred = compose_eps(tp, P, dc, tp.leaf(z),
                               std::span<const Var>(conds.data(), conds.size()), ts,
                               model.variant.mode, model.variant.agg);
        auto pv = tp.val(pred);

        f64 inv_sqrt_alpha = 1.0 / std::sqrt(rs.sched.alpha[static_cast<size_t>(i)]);
        f64 eta = rs.sched.eta[static_cast<size_t>(i)];
        f64 sigma = std::sqrt(rs.sched.beta_tilde[static_cast<size_t>(i)]);
        for (int c = 0; c < n; ++c) {
            if (i > 0)
                rngs[static_cast<size_t>(c)].fill_normal(std::span<f32>(noise.data));
            for (int64_t j = 0; j < zstride; ++j) {
                size_t idx = static_cast<size_t>(c * zstride + j);
                f64 v = inv_sqrt_alpha * (static_cast<f64>(z.data[idx]) - eta * pv[idx]);
                if (i > 0) v += sigma * noise.data[static_cast<size_t>(j)];
                z.data[idx] = static_cast<f32>(v);
            }
        }
    }
    std::vector<Array<f32>> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Array<f32> zi({dc.l_z, dc.d_z});
        std::copy_n(z.data.begin() + i * zstride, zstride, zi.data.begin());
        out.push_back(std::move(zi));
    }
    return out;
}

namespace {

std::vector<Array<f32>> decode_latents(const DiffusionModel& model, const Dataset& ds,
                                       const VaeConfig& vae_cfg, const ParameterStore& vae_store,
                                       std::span<const Array<f32>> latents) {
    int n = static_cast<int>(latents.size());
    const DenoiserConfig& dc = model.den;
    Array<f32> zb({n, dc.l_z, dc.d_z});
    int64_t zstride = static_cast<int64_t>(dc.l_z) * dc.d_z;
    for (int i = 0; i < n; ++i)
        std::copy_n(latents[static_cast<size_t>(i)].data.begin(), zstride,
                    zb.data.begin() + i * zstride);
    Array<f32> xb = vae_decode_batch(vae_store, vae_cfg, zb);
    std::vector<Array<f32>> out;
    out.reserve(static_cast<size_t>(n));
    int64_t mstride = static_cast<int64_t>(kFrames) * kChannels;
    for (int i = 0; i < n; ++i) {
        Array<f32> m({kFrames, kChannels});
        std::copy_n(xb.data.begin() + i * mstride, mstride, m.data.begin());
        out.push_back(ds.denormalized(m));
    }
    return out;
}

} // namespace

std::vector<Array<f32>> generate_motions(const DiffusionModel& model, const Dataset& ds,
                                         const VaeConfig& vae_cfg, const ParameterStore& vae_store,
                                         std::span<const std::vector<Array<f32>>> cond_sets,
                                         int steps, uint64_t seed) {
    int n = static_cast<int>(cond_sets.size());
    if (n == 0) return {};
    size_t k = cond_sets[0].size();
    for (const auto& cs : cond_sets)
        if (cs.size() != k) fail("generate_motions: ragged condition sets");
    const DenoiserConfig& dc = model.den;
    std::vector<Array<f32>> branches;
    for (size_t kb = 0; kb < k; ++kb) {
        Array<f32> cb({n, dc.l_c, dc.d_c});
        int64_t stride = static_cast<int64_t>(dc.l_c) * dc.d_c;
        for (int i = 0; i < n; ++i)
            std::copy_n(cond_sets[static_cast<size_t>(i)][kb].data.begin(), stride,
                        cb.data.begin() + i * stride);
        branches.push_back(std::move(cb));
    }
    Rng root(seed);
    std::vector<Rng> rngs;
    rngs.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) rngs.push_back(root.fork(static_cast<uint64_t>(i)));
    auto latents = reverse_chains(model, branches, rngs, steps);
    return decode_latents(model, ds, vae_cfg, vae_store, latents);
}

std::vector<Array<f32>> generate_decomposed(const DiffusionModel& model, const Dataset& ds,
                                            const VaeConfig& vae_cfg,
                                            const ParameterStore& vae_store,
                                            std::span<const Array<f32>> conds,
                                            std::span<const uint64_t> seeds, int steps) {
    int k = static_cast<int>(conds.size());
    if (k == 0) fail("generate_decomposed: no conditions");
    if (seeds.size() != conds.size())
        fail("generate_decomposed: ", seeds.size(), " seeds for ", k, " chains");
    const DenoiserConfig& dc = model.den;
    // K independent chains, chain j conditioned only on conds[j]
    Array<f32> cb({k, dc.l_c, dc.d_c});
    int64_t stride = static_cast<int64_t>(dc.l_c) * dc.d_c;
    for (int j = 0; j < k; ++j)
        std::copy_n(conds[static_cast<size_t>(j)].data.begin(), stride,
                    cb.data.begin() + j * stride);
    std::vector<Rng> rngs;
    rngs.reserve(static_cast<size_t>(k));
    for (uint64_t s : seeds) rngs.push_back(Rng(s));
    std::array<Array<f32>, 1> branch{std::move(cb)};
    auto latents = reverse_chains(model, branch, rngs, steps);
    return decode_latents(model, ds, vae_cfg, vae_store, latents);
}

} // namespace dmg
