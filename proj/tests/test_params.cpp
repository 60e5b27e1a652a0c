// ParameterStore: AdamW update oracles and checkpoint round-trips.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dmg/params.hpp"

using namespace dmg;

TEST_CASE("adamw: zero gradients and zero weight decay leave parameters unchanged") {
    ParameterStore store;
    Rng rng(1);
    store.create_normal("a.w", {3, 4}, rng, 0.5);
    store.create_normal("b.w", {7}, rng, 0.5);
    auto before_a = store.at("a.w").data;
    auto before_b = store.at("b.w").data;
    std::map<std::string, Array<f32>> grads;
    grads.emplace("a.w", Array<f32>({3, 4}));
    grads.emplace("b.w", Array<f32>({7}));
    AdamwConfig cfg;
    cfg.weight_decay = 0.0f;
    store.adamw_step(grads, cfg);
    CHECK(store.at("a.w").data == before_a);
    CHECK(store.at("b.w").data == before_b);
    CHECK(store.step() == 1);
}

TEST_CASE("adamw: one step on f(w)=w^2 from w=1 decreases f") {
    ParameterStore store;
    store.create("w", Array<f32>({1}, {1.0f}));
    std::map<std::string, Array<f32>> grads;
    grads.emplace("w", Array<f32>({1}, {2.0f})); // df/dw at w=1
    AdamwConfig cfg;
    cfg.lr = 0.1f;
    store.adamw_step(grads, cfg);
    f32 w = store.at("w").data[0];
    CHECK(w * w < 1.0f);
}

TEST_CASE("adamw: step-1 bias correction matches the hand-computed value") {
    // g=1, lr=0.1, betas (0.9, 0.999), eps 1e-8, wd 0:
    //   m=0.1, v=0.001, m_hat=1, v_hat=1, w -= 0.1 * 1/(1+1e-8)
    ParameterStore store;
    store.create("w", Array<f32>({1}, {1.0f}));
    std::map<std::string, Array<f32>> grads;
    grads.emplace("w", Array<f32>({1}, {1.0f}));
    AdamwConfig cfg;
    cfg.lr = 0.1f;
    cfg.beta1 = 0.9f;
    cfg.beta2 = 0.999f;
    cfg.eps = 1e-8f;
    cfg.weight_decay = 0.0f;
    store.adamw_step(grads, cfg);
    f32 expected = 1.0f - 0.1f * (1.0f / (1.0f + 1e-8f));
    CHECK(store.at("w").data[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("adamw: missing or extra gradient keys are rejected") {
    ParameterStore store;
    Rng rng(2);
    store.create_normal("w", {2}, rng, 1.0);
    std::map<std::string, Array<f32>> empty;
    CHECK_THROWS_AS(store.adamw_step(empty, AdamwConfig{}), Error);
    std::map<std::string, Array<f32>> extra;
    extra.emplace("w", Array<f32>({2}));
    extra.emplace("ghost", Array<f32>({2}));
    CHECK_THROWS_AS(store.adamw_step(extra, AdamwConfig{}), Error);
}

TEST_CASE("checkpoint: save/load round-trip is bit-exact, magic validated") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "dmg_params_test";
    fs::create_directories(dir);
    std::string path = (dir / "ck.dmgc").string();

    ParameterStore store;
    Rng rng(3);
    store.create_normal("enc.w0", {5, 9}, rng, 0.7);
    store.create_normal("enc.b0", {9}, rng, 0.7);
    store.create_normal("dec.w0", {9, 5}, rng, 0.7);
    store.save(path);

    ParameterStore loaded;
    loaded.load(path);
    CHECK(loaded.names() == store.names());
    for (const auto& name : store.names()) {
        const auto& a = store.at(name);
        const auto& b = loaded.at(name);
        CHECK(a.shape == b.shape);
        CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(f32)) == 0);
    }
    CHECK(loaded.fingerprint() == store.fingerprint());

    // header starts with the container magic
    std::ifstream f(path, std::ios::binary);
    char magic[4];
    f.read(magic, 4);
    CHECK(std::memcmp(magic, "DMGC", 4) == 0);

    // corrupted magic is rejected; missing file raises FileNotFound
    std::ofstream bad(path, std::ios::binary | std::ios::trunc);
    bad << "XXXX";
    bad.close();
    ParameterStore p2;
    CHECK_THROWS_AS(p2.load(path), Error);
    CHECK_THROWS_AS(p2.load((dir / "absent.dmgc").string()), FileNotFound);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint: serialization is a pure function of contents") {
    ParameterStore a, b;
    Rng r1(9), r2(9);
    a.create_normal("x", {4, 4}, r1, 1.0);
    b.create_normal("x", {4, 4}, r2, 1.0);
    CHECK(a.fingerprint() == b.fingerprint());
}
