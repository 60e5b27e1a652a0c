// Synthetic dataset suite: generator contracts, the exhaustive oracle
// calibration sweep, dataset determinism, and the Monte-Carlo mixture-mean
// oracle.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "dmg/data.hpp"
#include "dmg/rng.hpp"

using namespace dmg;
namespace fs = std::filesystem;

TEST_CASE("straight: channel 0 strictly increasing with constant step, limbs zero") {
    ConceptSpec c{Family::Path, "straight", {{"speed", 1.0}, {"heading", 0.0}}};
    Array<f32> m = synth_concept_motion(c, 64);
    for (int t = 0; t + 1 < 64; ++t) {
        f32 step = m.data[static_cast<size_t>(t + 1) * kChannels] -
                   m.data[static_cast<size_t>(t) * kChannels];
        CHECK(step == doctest::Approx(1.0).epsilon(1e-5));
        CHECK(step > 0.0f);
    }
    for (int t = 0; t < 64; ++t)
        for (int ch = 2; ch < kChannels; ++ch)
            CHECK(m.data[static_cast<size_t>(t) * kChannels + ch] == 0.0f);
}

TEST_CASE("idle gesture: all limb channels zero") {
    ConceptSpec c{Family::Gesture, "idle", {}};
    Array<f32> m = synth_concept_motion(c, 64);
    for (f32 v : m.data) CHECK(v == 0.0f);
}

TEST_CASE("circle: root points lie on a circle of the given radius") {
    // analytic oracle: the circumradius of any three track points equals r
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        ConceptSpec c = sample_concept("circle", rng);
        f64 r = c.params["radius"];
        Array<f32> m = synth_concept_motion(c, 64);
        auto px = [&](int t) { return static_cast<f64>(m.data[static_cast<size_t>(t) * kChannels]); };
        auto py = [&](int t) { return static_cast<f64>(m.data[static_cast<size_t>(t) * kChannels + 1]); };
        int a = 0, b = 21, d = 42;
        f64 ab = std::hypot(px(b) - px(a), py(b) - py(a));
        f64 bd = std::hypot(px(d) - px(b), py(d) - py(b));
        f64 ad = std::hypot(px(d) - px(a), py(d) - py(a));
        f64 s = (ab + bd + ad) / 2;
        f64 area = std::sqrt(std::max(0.0, s * (s - ab) * (s - bd) * (s - ad)));
        f64 circumradius = ab * bd * ad / (4 * area);
        CHECK(std::abs(circumradius - r) <= 1e-4 * r);
    }
}

TEST_CASE("compose: idle is identity on limbs, stop is identity on root") {
    Rng rng(5);
    Array<f32> sp = synth_concept_motion(sample_concept("straight", rng), 64);
    Array<f32> idle = synth_concept_motion(ConceptSpec{Family::Gesture, "idle", {}}, 64);
    Array<f32> composed = compose_pair(sp, idle);
    CHECK(std::memcmp(composed.data.data(), sp.data.data(), sp.data.size() * sizeof(f32)) == 0);

    Array<f32> wv = synth_concept_motion(sample_concept("wave_left", rng), 64);
    Array<f32> stop = synth_concept_motion(ConceptSpec{Family::Path, "stop", {}}, 64);
    Array<f32> composed2 = compose_pair(stop, wv);
    CHECK(std::memcmp(composed2.data.data(), wv.data.data(), wv.data.size() * sizeof(f32)) == 0);
}

TEST_CASE("compose: channels come elementwise from the right parent") {
    Rng rng(6);
    Array<f32> cp = synth_concept_motion(sample_concept("circle", rng), 64);
    Array<f32> rb = synth_concept_motion(sample_concept("raise_both", rng), 64);
    Array<f32> out = compose_pair(cp, rb);
    for (int t = 0; t < 64; ++t) {
        for (int ch = 0; ch < 2; ++ch)
            CHECK(out.data[static_cast<size_t>(t) * kChannels + ch] ==
                  cp.data[static_cast<size_t>(t) * kChannels + ch]);
        for (int ch = 2; ch < kChannels; ++ch)
            CHECK(out.data[static_cast<size_t>(t) * kChannels + ch] ==
                  rb.data[static_cast<size_t>(t) * kChannels + ch]);
    }
}

TEST_CASE("compose: precondition violations are rejected") {
    Rng rng(7);
    Array<f32> wave = synth_concept_motion(sample_concept("wave_left", rng), 64);
    Array<f32> circ = synth_concept_motion(sample_concept("circle", rng), 64);
    CHECK_THROWS_AS(compose_pair(wave, wave), Error); // wave has live limbs
    CHECK_THROWS_AS(compose_pair(circ, circ), Error); // circle root moves
}

TEST_CASE("decompose_label: definition cases and exhaustive round-trip") {
    auto [p1, g1] = decompose_label("zigzag", "wave_left");
    CHECK(p1 == "zigzag");
    CHECK(g1 == "wave_left");
    auto [p2, g2] = decompose_label("stop", "idle");
    CHECK(p2 == "stop");
    CHECK(g2 == "idle");
    CHECK_THROWS_AS(decompose_label("stop", "stop"), Error);
    CHECK_THROWS_AS(decompose_label("swim", "idle"), Error);
    // round-trip over the full 16-pair grid: composing motions labeled with
    // the two returned names reproduces the holistic label under the oracle
    Rng rng(8);
    for (const auto& [p, g] : all_pairs()) {
        auto [dp, dg] = decompose_label(p, g);
        Array<f32> m = compose_pair(synth_concept_motion(sample_concept(dp, rng), 64),
                                    synth_concept_motion(sample_concept(dg, rng), 64));
        auto [op, og] = oracle_classify(m);
        CHECK(op == p);
        CHECK(og == g);
    }
}

TEST_CASE("oracle: 100% on single concepts across 100 seeded draws each") {
    for (const auto& name : path_names()) {
        for (uint64_t s = 0; s < 100; ++s) {
            Rng rng(1000 + s);
            Array<f32> m = synth_concept_motion(sample_concept(name, rng), 64);
            auto [p, g] = oracle_classify(m);
            INFO("concept " << name << " seed " << s);
            REQUIRE(p == name);
            REQUIRE(g == "idle"); // rest limbs
        }
    }
    for (const auto& name : gesture_names()) {
        for (uint64_t s = 0; s < 100; ++s) {
            Rng rng(2000 + s);
            Array<f32> m = synth_concept_motion(sample_concept(name, rng), 64);
            auto [p, g] = oracle_classify(m);
            INFO("concept " << name << " seed " << s);
            REQUIRE(g == name);
            REQUIRE(p == "stop"); // stationary root
        }
    }
}

TEST_CASE("oracle: 100% on composed pairs across the seeded sweep") {
    uint64_t s = 0;
    for (const auto& [p, g] : all_pairs()) {
        for (int rep = 0; rep < 100; ++rep, ++s) {
            Rng rng(3000 + s);
            Array<f32> m = compose_pair(synth_concept_motion(sample_concept(p, rng), 64),
                                        synth_concept_motion(sample_concept(g, rng), 64));
            auto [op, og] = oracle_classify(m);
            INFO("pair (" << p << "," << g << ") rep " << rep);
            REQUIRE(op == p);
            REQUIRE(og == g);
        }
    }
}

TEST_CASE("oracle: all-zero motion classifies as (stop, idle)") {
    Array<f32> zero({64, kChannels});
    auto [p, g] = oracle_classify(zero);
    CHECK(p == "stop");
    CHECK(g == "idle");
}

TEST_CASE("channel separation: zeroing the other family's channels keeps the label") {
    Rng rng(11);
    uint64_t s = 0;
    for (const auto& [p, g] : all_pairs()) {
        Rng sub = rng.fork(s++);
        Array<f32> m = compose_pair(synth_concept_motion(sample_concept(p, sub), 64),
                                    synth_concept_motion(sample_concept(g, sub), 64));
        Array<f32> root_only = m, limbs_only = m;
        for (int t = 0; t < 64; ++t) {
            for (int ch = 2; ch < kChannels; ++ch)
                root_only.data[static_cast<size_t>(t) * kChannels + ch] = 0.0f;
            for (int ch = 0; ch < 2; ++ch)
                limbs_only.data[static_cast<size_t>(t) * kChannels + ch] = 0.0f;
        }
        CHECK(oracle_classify(root_only).first == p);
        CHECK(oracle_classify(limbs_only).second == g);
    }
}

TEST_CASE("dataset: same seed gives byte-identical files and manifest hash") {
    DatasetConfig cfg;
    cfg.train_count = 64;
    cfg.test_count = 16;
    cfg.heldout_count = 8;
    cfg.seed = 7;
    fs::path dir1 = fs::temp_directory_path() / "dmg_ds_a";
    fs::path dir2 = fs::temp_directory_path() / "dmg_ds_b";
    save_dataset(generate_dataset(cfg), dir1.string());
    save_dataset(generate_dataset(cfg), dir2.string());
    for (const char* f :
         {"manifest.json", "labels.jsonl", "train.dmg1", "test.dmg1", "heldout.dmg1"}) {
        std::ifstream a(dir1 / f, std::ios::binary), b(dir2 / f, std::ios::binary);
        std::vector<char> ba((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::vector<char> bb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        INFO(f);
        CHECK(ba == bb);
    }
    CHECK(manifest_fingerprint(dir1.string()) == manifest_fingerprint(dir2.string()));

    // different seed -> different hash
    cfg.seed = 8;
    fs::path dir3 = fs::temp_directory_path() / "dmg_ds_c";
    save_dataset(generate_dataset(cfg), dir3.string());
    CHECK(manifest_fingerprint(dir3.string()) != manifest_fingerprint(dir1.string()));

    // round-trip load
    Dataset ds = load_dataset(dir1.string());
    CHECK(ds.train.size() == 64);
    CHECK(ds.test.size() == 16);
    CHECK(ds.heldout.size() == 8);
    CHECK(ds.train_labels[0].id == "train_00000");
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    fs::remove_all(dir3);
}

TEST_CASE("dataset: train split never contains a held-out pair") {
    DatasetConfig cfg;
    cfg.train_count = 280;
    cfg.test_count = 28;
    cfg.heldout_count = 8;
    cfg.seed = 21;
    Dataset ds = generate_dataset(cfg);
    std::set<std::pair<std::string, std::string>> held(cfg.heldout_pairs.begin(),
                                                       cfg.heldout_pairs.end());
    for (const auto& lab : ds.train_labels) CHECK(held.count({lab.path, lab.gesture}) == 0);
    for (const auto& lab : ds.test_labels) CHECK(held.count({lab.path, lab.gesture}) == 0);
    for (const auto& lab : ds.heldout_labels) CHECK(held.count({lab.path, lab.gesture}) == 1);
    // all 14 training pairs appear
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& lab : ds.train_labels) seen.insert({lab.path, lab.gesture});
    CHECK(seen.size() == 14);
}

TEST_CASE("dataset: invalid held-out configuration is rejected") {
    DatasetConfig cfg;
    cfg.heldout_pairs = {{"circle", "swim"}, {"zigzag", "wave_left"}};
    CHECK_THROWS_AS(generate_dataset(cfg), Error);
    cfg.heldout_pairs = {{"zigzag", "wave_left"}};
    CHECK_THROWS_AS(generate_dataset(cfg), Error);
}

TEST_CASE("dataset: train mean matches the Monte-Carlo generator-mixture mean") {
    // independent oracle: 100k draws from the generator mixture over the
    // same 14 training pairs
    DatasetConfig cfg;
    cfg.seed = 33;
    Dataset ds = generate_dataset(cfg); // default 4000/800/200
    auto grid = all_pairs();
    std::vector<std::pair<std::string, std::string>> train_pairs;
    for (const auto& p : grid)
        if (std::find(cfg.heldout_pairs.begin(), cfg.heldout_pairs.end(), p) ==
            cfg.heldout_pairs.end())
            train_pairs.push_back(p);
    std::array<f64, kChannels> mc_sum{};
    int64_t n = 0;
    Rng rng(991);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        const auto& pair = train_pairs[static_cast<size_t>(i) % train_pairs.size()];
        Rng sub = rng.fork(static_cast<uint64_t>(i));
        Array<f32> m =
            compose_pair(synth_concept_motion(sample_concept(pair.first, sub), kFrames),
                         synth_concept_motion(sample_concept(pair.second, sub), kFrames));
        for (int t = 0; t < kFrames; ++t, ++n)
            for (int ch = 0; ch < kChannels; ++ch)
                mc_sum[static_cast<size_t>(ch)] += m.data[static_cast<size_t>(t) * kChannels + ch];
    }
    for (int ch = 0; ch < kChannels; ++ch) {
        f64 mc_mean = mc_sum[static_cast<size_t>(ch)] / static_cast<f64>(n);
        INFO("channel " << ch << " mc_mean " << mc_mean << " train mean "
                        << ds.norm_mean[static_cast<size_t>(ch)]);
        CHECK(std::abs(ds.norm_mean[static_cast<size_t>(ch)] - mc_mean) <= 0.05);
    }
}

TEST_CASE("dmg1 container: layout and round-trip") {
    Rng rng(55);
    std::vector<Array<f32>> motions;
    for (int i = 0; i < 3; ++i)
        motions.push_back(synth_concept_motion(sample_concept("circle", rng), 64));
    fs::path p = fs::temp_directory_path() / "dmg_container_test.dmg1";
    write_dmg1(p.string(), motions);

    std::ifstream f(p, std::ios::binary);
    char magic[4];
    f.read(magic, 4);
    CHECK(std::memcmp(magic, "DMG1", 4) == 0);
    uint32_t count, len, dm;
    f.read(reinterpret_cast<char*>(&count), 4);
    f.read(reinterpret_cast<char*>(&len), 4);
    f.read(reinterpret_cast<char*>(&dm), 4);
    CHECK(count == 3);
    CHECK(len == 64);
    CHECK(dm == 6);

    auto back = read_dmg1(p.string());
    REQUIRE(back.size() == 3);
    for (size_t i = 0; i < 3; ++i)
        CHECK(std::memcmp(back[i].data.data(), motions[i].data.data(),
                          motions[i].data.size() * sizeof(f32)) == 0);
    fs::remove(p);
}

TEST_CASE("generator bounds: channel values stay within the documented cap") {
    Rng rng(66);
    auto pairs = all_pairs();
    for (uint64_t s = 0; s < 200; ++s) {
        Rng sub = rng.fork(s);
        const auto& pair = pairs[static_cast<size_t>(s % 16)];
        Array<f32> m = compose_pair(synth_concept_motion(sample_concept(pair.first, sub), 64),
                                    synth_concept_motion(sample_concept(pair.second, sub), 64));
        for (f32 v : m.data) REQUIRE(std::abs(v) <= kChannelMax);
    }
}

TEST_CASE("synth_concept_motion: unknown names and short lengths rejected") {
    CHECK_THROWS_AS(synth_concept_motion(ConceptSpec{Family::Path, "swim", {}}, 64), Error);
    CHECK_THROWS_AS(synth_concept_motion(ConceptSpec{Family::Path, "stop", {}}, 4), Error);
    Rng rng(1);
    CHECK_THROWS_AS(sample_concept("swim", rng), Error);
}
