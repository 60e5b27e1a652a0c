// VAE suite: shape/determinism contracts, closed-form KL values, a
// finite-difference check through encoder+decoder, the training smoke test,
// and the trained-model targets (reconstruction error, latent statistics,
// linear-probe separability).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "dmg/gradcheck.hpp"
#include "dmg/vae.hpp"

using namespace dmg;

namespace {

Dataset small_dataset(uint64_t seed, int train = 1200, int test = 240) {
    DatasetConfig cfg;
    cfg.train_count = train;
    cfg.test_count = test;
    cfg.heldout_count = 16;
    cfg.seed = seed;
    return generate_dataset(cfg);
}

Array<f32> batch_of(const Dataset& ds, const std::vector<Array<f32>>& split, int start, int b) {
    Array<f32> xb({b, kFrames, kChannels});
    for (int i = 0; i < b; ++i) {
        Array<f32> nm = ds.normalized(split[static_cast<size_t>(start + i)]);
        std::copy_n(nm.data.begin(), nm.data.size(),
                    xb.data.begin() + static_cast<int64_t>(i) * kFrames * kChannels);
    }
    return xb;
}

// trained once, shared by the expensive checks below
struct TrainedVae {
    Dataset ds;
    VaeConfig cfg;
    ParameterStore store;
};

const TrainedVae& trained() {
    static TrainedVae tv = [] {
        TrainedVae out{small_dataset(101), VaeConfig{}, ParameterStore{}};
        out.cfg.epochs = 30;
        out.cfg.seed = 5;
        auto res = train_vae(out.ds, out.cfg);
        REQUIRE(!res.aborted);
        out.store = std::move(res.store);
        return out;
    }();
    return tv;
}

} // namespace

TEST_CASE("encode/decode shape contracts and determinism") {
    VaeConfig cfg;
    ParameterStore store;
    Rng rng(1);
    init_vae(store, cfg, rng);
    Dataset ds = small_dataset(7, 32, 8);
    Array<f32> xb = batch_of(ds, ds.train, 0, 2);

    Tape<f32> tp;
    ParamLoader<f32> P(tp, store, false);
    auto [mu, logvar] = vae_encode(tp, P, cfg, tp.leaf(xb));
    CHECK(tp.shape(mu) == Shape{2, 16, 16});
    CHECK(tp.shape(logvar) == Shape{2, 16, 16});
    Var xhat = vae_decode(tp, P, cfg, mu);
    CHECK(tp.shape(xhat) == Shape{2, 64, 6});

    Array<f32> mu1 = vae_encode_mu(store, cfg, xb);
    Array<f32> mu2 = vae_encode_mu(store, cfg, xb);
    CHECK(std::memcmp(mu1.data.data(), mu2.data.data(), mu1.data.size() * sizeof(f32)) == 0);
    Array<f32> d1 = vae_decode_batch(store, cfg, mu1);
    Array<f32> d2 = vae_decode_batch(store, cfg, mu1);
    CHECK(std::memcmp(d1.data.data(), d2.data.data(), d1.data.size() * sizeof(f32)) == 0);

    Array<f32> bad({2, 60, kChannels});
    Tape<f32> tp2;
    ParamLoader<f32> P2(tp2, store, false);
    CHECK_THROWS_AS(vae_encode(tp2, P2, cfg, tp2.leaf(bad)), Error);
    Array<f32> badz({2, 16, 5});
    CHECK_THROWS_AS(vae_decode(tp2, P2, cfg, tp2.leaf(badz)), Error);
}

TEST_CASE("KL closed form: zero at the prior, 0.5 at mu=1") {
    Tape<f64> tp;
    Array<f64> zero({1, 1, 1});
    Var kl0 = vae_kl(tp, tp.leaf(zero), tp.leaf(zero));
    CHECK(tp.scalar(kl0) == 0.0);

    Array<f64> one({1, 1, 1}, {1.0});
    Var kl1 = vae_kl(tp, tp.leaf(one), tp.leaf(zero));
    CHECK(tp.scalar(kl1) == doctest::Approx(0.5).epsilon(1e-12));

    // nonnegative over random (mu, logvar)
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        Array<f64> mu({1, 2, 4}), lv({1, 2, 4});
        rng.fill_uniform(std::span<f64>(mu.data), -2.0, 2.0);
        rng.fill_uniform(std::span<f64>(lv.data), -2.0, 2.0);
        CHECK(tp.scalar(vae_kl(tp, tp.leaf(mu), tp.leaf(lv))) >= 0.0);
    }
}

TEST_CASE("encoder+decoder gradient check (f64, one sample, reduced widths)") {
    VaeConfig cfg;
    cfg.width = 8;
    cfg.d_z = 2;
    ParameterStore store;
    Rng rng(17);
    init_vae(store, cfg, rng);

    Array<f32> x32({1, kFrames, kChannels});
    rng.fill_normal(std::span<f32>(x32.data));
    Array<f64> x = x32.cast<f64>();
    Array<f64> eps({1, 16, 2});
    rng.fill_normal(std::span<f64>(eps.data));

    std::vector<std::pair<std::string, Array<f64>>> pts;
    for (const auto& name : store.names())
        if (name.rfind("vae.lat_", 0) != 0) // calibration constants stay frozen
            pts.emplace_back(name, store.at(name).cast<f64>());

    auto res = grad_check_many(
        [&](Tape<f64>& t, std::span<const Var> vars) {
            std::map<std::string, Var> by_name;
            for (size_t i = 0; i < pts.size(); ++i) by_name[pts[i].first] = vars[i];
            by_name["vae.lat_shift"] = t.leaf(store.at("vae.lat_shift").cast<f64>());
            by_name["vae.lat_scale"] = t.leaf(store.at("vae.lat_scale").cast<f64>());
            ParamLoader<f64> P(t, std::move(by_name));
            Var x_leaf = t.leaf(x);
            auto [mu, logvar] = vae_encode(t, P, cfg, x_leaf);
            Var sigma = t.exp(t.smul(logvar, 0.5));
            Var z = t.add(mu, t.mul(sigma, t.leaf(eps)));
            Var xhat = vae_decode(t, P, cfg, z);
            Var recon = t.mse(xhat, x_leaf);
            return t.add(recon, t.smul(vae_kl(t, mu, logvar), 1e-3));
        },
        pts, 1e-5);
    INFO("worst " << res.worst_input << " coord " << res.worst_coord);
    CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("training smoke: reconstruction decreases over the first 5 epochs") {
    Dataset ds = small_dataset(43, 320, 32);
    VaeConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 9;
    auto res = train_vae(ds, cfg);
    REQUIRE(!res.aborted);
    REQUIRE(res.log.size() == 5);
    for (size_t e = 1; e < res.log.size(); ++e) {
        INFO("epoch " << e << ": " << res.log[e - 1].recon << " -> " << res.log[e].recon);
        CHECK(res.log[e].recon < res.log[e - 1].recon);
    }
}

TEST_CASE("trained VAE: test-split reconstruction MSE at most 0.05") {
    const auto& tv = trained();
    int n = static_cast<int>(tv.ds.test.size());
    f64 err_sum = 0;
    int64_t count = 0;
    const int chunk = 64;
    for (int start = 0; start < n; start += chunk) {
        int b = std::min(chunk, n - start);
        Array<f32> xb = batch_of(tv.ds, tv.ds.test, start, b);
        Array<f32> mu = vae_encode_mu(tv.store, tv.cfg, xb);
        Array<f32> xhat = vae_decode_batch(tv.store, tv.cfg, mu);
        for (size_t i = 0; i < xb.data.size(); ++i) {
            f64 d = static_cast<f64>(xhat.data[i]) - xb.data[i];
            err_sum += d * d;
            ++count;
        }
    }
    f64 mse = err_sum / static_cast<f64>(count);
    INFO("test reconstruction mse " << mse);
    CHECK(mse <= 0.05);
}

TEST_CASE("trained VAE: latent means within [-0.5,0.5], stds within [0.5,2.0]") {
    const auto& tv = trained();
    int n = static_cast<int>(tv.ds.train.size());
    int lz = tv.cfg.l_z(), dz = tv.cfg.d_z;
    std::vector<f64> sum(static_cast<size_t>(lz * dz), 0.0),
        sumsq(static_cast<size_t>(lz * dz), 0.0);
    const int chunk = 128;
    for (int start = 0; start < n; start += chunk) {
        int b = std::min(chunk, n - start);
        Array<f32> mu = vae_encode_mu(tv.store, tv.cfg, batch_of(tv.ds, tv.ds.train, start, b));
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < lz * dz; ++j) {
                f64 v = mu.data[static_cast<size_t>(i) * lz * dz + static_cast<size_t>(j)];
                sum[static_cast<size_t>(j)] += v;
                sumsq[static_cast<size_t>(j)] += v * v;
            }
    }
    for (int j = 0; j < lz * dz; ++j) {
        f64 mean = sum[static_cast<size_t>(j)] / n;
        f64 var = sumsq[static_cast<size_t>(j)] / n - mean * mean;
        f64 sd = std::sqrt(std::max(var, 0.0));
        INFO("latent dim " << j << " mean " << mean << " std " << sd);
        CHECK(mean >= -0.5);
        CHECK(mean <= 0.5);
        CHECK(sd >= 0.5);
        CHECK(sd <= 2.0);
    }
}

TEST_CASE("trained VAE: straight vs circle latents are linearly separable (probe > 0.95)") {
    const auto& tv = trained();
    std::vector<std::pair<Array<f32>, int>> samples; // (latent, label)
    for (size_t i = 0; i < tv.ds.test.size(); ++i) {
        const auto& lab = tv.ds.test_labels[i];
        if (lab.path != "straight" && lab.path != "circle") continue;
        Array<f32> xb = batch_of(tv.ds, tv.ds.test, static_cast<int>(i), 1);
        samples.emplace_back(vae_encode_mu(tv.store, tv.cfg, xb), lab.path == "circle" ? 1 : 0);
    }
    REQUIRE(samples.size() >= 40);
    int dim = static_cast<int>(samples[0].first.data.size());
    // logistic-regression probe, plain gradient descent (test-only oracle)
    std::vector<f64> w(static_cast<size_t>(dim), 0.0);
    f64 bias = 0.0;
    for (int iter = 0; iter < 300; ++iter) {
        std::vector<f64> gw(static_cast<size_t>(dim), 0.0);
        f64 gb = 0.0;
        for (const auto& [z, y] : samples) {
            f64 s = bias;
            for (int j = 0; j < dim; ++j)
                s += w[static_cast<size_t>(j)] * z.data[static_cast<size_t>(j)];
            f64 p = 1.0 / (1.0 + std::exp(-s));
            f64 d = p - y;
            for (int j = 0; j < dim; ++j)
                gw[static_cast<size_t>(j)] += d * z.data[static_cast<size_t>(j)];
            gb += d;
        }
        for (int j = 0; j < dim; ++j)
            w[static_cast<size_t>(j)] -= 0.05 * gw[static_cast<size_t>(j)] / samples.size();
        bias -= 0.05 * gb / samples.size();
    }
    int correct = 0;
    for (const auto& [z, y] : samples) {
        f64 s = bias;
        for (int j = 0; j < dim; ++j) s += w[static_cast<size_t>(j)] * z.data[static_cast<size_t>(j)];
        correct += (s > 0.0) == (y == 1);
    }
    f64 acc = static_cast<f64>(correct) / samples.size();
    INFO("probe accuracy " << acc << " over " << samples.size() << " samples");
    CHECK(acc > 0.95);
}
