#include "dmg/vae.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace dmg {

namespace {

// conv = im2col + shared linear; weight [k*c_in, c_out]
void init_conv(ParameterStore& store, const std::string& prefix, int c_in, int c_out, int k,
               Rng& rng) {
    init_linear(store, prefix, k * c_in, c_out, rng, 1.0 / std::sqrt(static_cast<f64>(k * c_in)));
}

template <typename T>
Var conv1d(Tape<T>& tp, ParamLoader<T>& P, const std::string& prefix, Var x, int k, int stride,
           int pad) {
    return linear3(tp, P, prefix, tp.im2col(x, k, stride, pad));
}

} // namespace

void init_vae(ParameterStore& store, const VaeConfig& cfg, Rng& rng) {
    int w = cfg.width;
    init_conv(store, "vae.enc.c0", kChannels, w, 3, rng);
    init_conv(store, "vae.enc.c1", w, w, 4, rng);
    init_conv(store, "vae.enc.c2", w, w, 3, rng);
    init_conv(store, "vae.enc.c3", w, w, 4, rng);
    init_layernorm(store, "vae.enc.ln", w);
    init_linear(store, "vae.enc.mu", w, cfg.d_z, rng, 0.02);
    init_linear(store, "vae.enc.logvar", w, cfg.d_z, rng, 0.02);

    init_linear(store, "vae.dec.in", cfg.d_z, w, rng, 0.08);
    init_conv(store, "vae.dec.c0", w, w, 3, rng);
    init_conv(store, "vae.dec.c1", w, w, 3, rng);
    init_conv(store, "vae.dec.c2", w, w, 3, rng);
    init_layernorm(store, "vae.dec.ln", w);
    init_linear(store, "vae.dec.out", w, kChannels, rng, 0.02);

    // per-dimension latent calibration, identity until train_vae fits it
    // from the train split; folded into encode/decode so round-trips cancel
    store.create_zeros("vae.lat_shift", {cfg.l_z(), cfg.d_z});
    store.create_const("vae.lat_scale", {cfg.l_z(), cfg.d_z}, 1.0f);
}

namespace {

// broadcast a [l_z, d_z] calibration tensor over the batch as [B, n]
template <typename T>
Var tile_cal(Tape<T>& tp, Var cal, int batch, int n) {
    return tp.tile_rows(tp.reshape(cal, {1, n}), batch);
}

} // namespace

template <typename T>
std::pair<Var, Var> vae_encode(Tape<T>& tp, ParamLoader<T>& P, const VaeConfig& cfg, Var x) {
    const Shape& s = tp.shape(x);
    if (s.size() != 3 || s[2] != kChannels || s[1] != kFrames)
        fail("vae_encode: expected [B,", kFrames, ",", kChannels, "], got ", shape_str(s));
    Var h = tp.gelu(conv1d(tp, P, "vae.enc.c0", x, 3, 1, 1));
    h = tp.gelu(conv1d(tp, P, "vae.enc.c1", h, 4, 2, 1)); // L/2
    h = tp.gelu(conv1d(tp, P, "vae.enc.c2", h, 3, 1, 1));
    h = tp.gelu(conv1d(tp, P, "vae.enc.c3", h, 4, 2, 1)); // L/4
    h = layer_norm3(tp, P, "vae.enc.ln", h);
    Var mu = linear3(tp, P, "vae.enc.mu", h);
    Var logvar = linear3(tp, P, "vae.enc.logvar", h);

    // latent calibration: mu' = (mu - shift)/scale, logvar' = logvar - 2 log scale
    int b = s[0];
    int n = cfg.l_z() * cfg.d_z;
    Var shift = tile_cal(tp, P("vae.lat_shift"), b, n);
    Var scale = tile_cal(tp, P("vae.lat_scale"), b, n);
    Var mu2 = tp.reshape(mu, {b, n});
    Var lv2 = tp.reshape(logvar, {b, n});
    Var mu_cal = tp.div(tp.sub(mu2, shift), scale);
    Var lv_cal = tp.sub(lv2, tp.smul(tp.log(scale), T(2)));
    return {tp.reshape(mu_cal, {b, cfg.l_z(), cfg.d_z}),
            tp.reshape(lv_cal, {b, cfg.l_z(), cfg.d_z})};
}
template std::pair<Var, Var> vae_encode<f32>(Tape<f32>&, ParamLoader<f32>&, const VaeConfig&, Var);
template std::pair<Var, Var> vae_encode<f64>(Tape<f64>&, ParamLoader<f64>&, const VaeConfig&, Var);

template <typename T>
Var vae_decode(Tape<T>& tp, ParamLoader<T>& P, const VaeConfig& cfg, Var z) {
    const Shape& s = tp.shape(z);
    if (s.size() != 3 || s[1] != cfg.l_z() || s[2] != cfg.d_z)
        fail("vae_decode: expected [B,", cfg.l_z(), ",", cfg.d_z, "], got ", shape_str(s));
    // undo the latent calibration before decoding
    int b = s[0];
    int n = cfg.l_z() * cfg.d_z;
    Var shift = tile_cal(tp, P("vae.lat_shift"), b, n);
    Var scale = tile_cal(tp, P("vae.lat_scale"), b, n);
    Var z_raw = tp.reshape(tp.add(tp.mul(tp.reshape(z, {b, n}), scale), shift),
                           {b, cfg.l_z(), cfg.d_z});
    Var h = tp.gelu(linear3(tp, P, "vae.dec.in", z_raw));
    h = tp.gelu(conv1d(tp, P, "vae.dec.c0", tp.upsample2(h), 3, 1, 1)); // L/2
    h = tp.gelu(conv1d(tp, P, "vae.dec.c1", tp.upsample2(h), 3, 1, 1)); // L
    h = tp.gelu(conv1d(tp, P, "vae.dec.c2", h, 3, 1, 1));
    h = layer_norm3(tp, P, "vae.dec.ln", h);
    return linear3(tp, P, "vae.dec.out", h);
}
template Var vae_decode<f32>(Tape<f32>&, ParamLoader<f32>&, const VaeConfig&, Var);
template Var vae_decode<f64>(Tape<f64>&, ParamLoader<f64>&, const VaeConfig&, Var);

template <typename T>
Var vae_kl(Tape<T>& tp, Var mu, Var logvar) {
    Var term = tp.sub(tp.sub(tp.add_scalar(logvar, T(1)), tp.mul(mu, mu)), tp.exp(logvar));
    return tp.smul(tp.mean(term), T(-0.5));
}
template Var vae_kl<f32>(Tape<f32>&, Var, Var);
template Var vae_kl<f64>(Tape<f64>&, Var, Var);

Array<f32> vae_encode_mu(const ParameterStore& store, const VaeConfig& cfg,
                         const Array<f32>& x_batch) {
    Tape<f32> tp;
    ParamLoader<f32> P(tp, store, false);
    auto [mu, logvar] = vae_encode(tp, P, cfg, tp.leaf(x_batch));
    return tp.val_array(mu);
}

Array<f32> vae_decode_batch(const ParameterStore& store, const VaeConfig& cfg,
                            const Array<f32>& z_batch) {
    Tape<f32> tp;
    ParamLoader<f32> P(tp, store, false);
    return tp.val_array(vae_decode(tp, P, cfg, tp.leaf(z_batch)));
}

VaeTrainResult train_vae(const Dataset& ds, const VaeConfig& cfg, const std::string& log_path) {
    if (ds.train.empty()) fail("train_vae: empty train split");
    VaeTrainResult res;
    Rng rng(cfg.seed);
    init_vae(res.store, cfg, rng);

    // normalized train tensor, assembled once
    int n = static_cast<int>(ds.train.size());
    std::vector<Array<f32>> norm;
    norm.reserve(static_cast<size_t>(n));
    for (const auto& m : ds.train) norm.push_back(ds.normalized(m));

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::trunc);
        if (!log) fail("train_vae: cannot open log '", log_path, "'");
    }

    AdamwConfig opt;
    opt.lr = cfg.lr;

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    ParameterStore last_good = res.store;
    int64_t lz = cfg.l_z();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle(std::span<int>(order), rng);
        f64 recon_sum = 0, kl_sum = 0;
        int steps = 0;
        for (int start = 0; start + cfg.batch <= n; start += cfg.batch) {
            int b = cfg.batch;
            Array<f32> xb({b, kFrames, kChannels});
            for (int i = 0; i < b; ++i)
                std::copy_n(norm[static_cast<size_t>(order[static_cast<size_t>(start + i)])].data.begin(),
                            static_cast<size_t>(kFrames) * kChannels,
                            xb.data.begin() + static_cast<int64_t>(i) * kFrames * kChannels);
            Array<f32> eps({b, static_cast<int>(lz), cfg.d_z});
            rng.fill_normal(std::span<f32>(eps.data));

            Tape<f32> tp;
            ParamLoader<f32> P(tp, res.store, true, {"vae.lat_"});
            Var x = tp.leaf(xb);
            auto [mu, logvar] = vae_encode(tp, P, cfg, x);
            Var sigma = tp.exp(tp.smul(logvar, 0.5f));
            Var z = tp.add(mu, tp.mul(sigma, tp.leaf(eps)));
            Var xhat = vae_decode(tp, P, cfg, z);
            Var recon = tp.mse(xhat, x);
            Var kl = vae_kl(tp, mu, logvar);
            Var loss = tp.add(recon, tp.smul(kl, cfg.kl_weight));

            f32 lval = tp.scalar(loss);
            if (!std::isfinite(lval)) {
                res.store = last_good;
                res.aborted = true;
                if (log) log << nlohmann::json{{"epoch", epoch}, {"aborted", true}}.dump() << '\n';
                return res;
            }
            tp.backward(loss);
            res.store.adamw_step(P.grads(), opt);
            recon_sum += tp.scalar(recon);
            kl_sum += tp.scalar(kl);
            ++steps;
        }
        VaeEpochLog entry{epoch, recon_sum / std::max(steps, 1), kl_sum / std::max(steps, 1)};
        res.log.push_back(entry);
        if (log)
            log << nlohmann::json{{"epoch", entry.epoch}, {"recon", entry.recon}, {"kl", entry.kl}}
                       .dump()
                << std::endl;
        last_good = res.store;
    }

    // fit the per-dimension latent calibration on the train split (identity
    // while the epochs above ran, so these encodes see the raw posterior)
    int64_t latdim = static_cast<int64_t>(lz) * cfg.d_z;
    std::vector<f64> sum(static_cast<size_t>(latdim), 0.0), sumsq(static_cast<size_t>(latdim), 0.0);
    const int chunk = 256;
    for (int start = 0; start < n; start += chunk) {
        int b = std::min(chunk, n - start);
        Array<f32> xb({b, kFrames, kChannels});
        for (int i = 0; i < b; ++i)
            std::copy_n(norm[static_cast<size_t>(start + i)].data.begin(),
                        static_cast<size_t>(kFrames) * kChannels,
                        xb.data.begin() + static_cast<int64_t>(i) * kFrames * kChannels);
        Array<f32> mu = vae_encode_mu(res.store, cfg, xb);
        for (int i = 0; i < b; ++i)
            for (int64_t j = 0; j < latdim; ++j) {
                f64 v = mu.data[static_cast<size_t>(i * latdim + j)];
                sum[static_cast<size_t>(j)] += v;
                sumsq[static_cast<size_t>(j)] += v * v;
            }
    }
    auto& shift = res.store.at("vae.lat_shift");
    auto& scale = res.store.at("vae.lat_scale");
    for (int64_t j = 0; j < latdim; ++j) {
        f64 mean = sum[static_cast<size_t>(j)] / n;
        f64 var = sumsq[static_cast<size_t>(j)] / n - mean * mean;
        shift.data[static_cast<size_t>(j)] = static_cast<f32>(mean);
        scale.data[static_cast<size_t>(j)] = static_cast<f32>(std::max(std::sqrt(std::max(var, 0.0)), 1e-3));
    }
    return res;
}

void save_vae(const ParameterStore& store, const VaeConfig& cfg, const std::string& path) {
    store.save(path);
    nlohmann::json meta;
    meta["width"] = cfg.width;
    meta["d_z"] = cfg.d_z;
    std::ofstream f(path + ".json", std::ios::trunc);
    if (!f) fail("save_vae: cannot write '", path, ".json'");
    f << meta.dump(2) << '\n';
}

std::pair<ParameterStore, VaeConfig> load_vae(const std::string& path) {
    std::ifstream f(path + ".json");
    if (!f) throw FileNotFound(path + ".json");
    nlohmann::json meta = nlohmann::json::parse(f);
    VaeConfig cfg;
    cfg.width = meta.at("width").get<int>();
    cfg.d_z = meta.at("d_z").get<int>();
    ParameterStore store;
    store.load(path);
    return {std::move(store), cfg};
}

} // namespace dmg
