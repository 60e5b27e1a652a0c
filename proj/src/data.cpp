#include "dmg/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "dmg/text.hpp"

namespace dmg {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr f64 kTau = 2.0 * std::numbers::pi;

// Oracle thresholds, frozen from the seeded calibration sweep
// (tests/test_data.cpp runs 100 parameter draws per concept).
constexpr f64 kStopBboxDiag = 0.6;      // smaller root bounding box -> stop
constexpr f64 kStraightResidual = 0.08; // rms distance from the best-fit line
constexpr f64 kTurnConsistency = 0.5;   // |net turn| / total |turn| above -> circle
constexpr f64 kRampCorrelation = 0.8;   // per-channel corr with time for raise_both
constexpr f64 kActiveChannelStd = 0.02;

} // namespace

const std::array<std::string, 4>& path_names() {
    static const std::array<std::string, 4> names = {"straight", "circle", "zigzag", "stop"};
    return names;
}
const std::array<std::string, 4>& gesture_names() {
    static const std::array<std::string, 4> names = {"wave_left", "wave_right", "raise_both",
                                                     "idle"};
    return names;
}

bool is_path_name(const std::string& name) {
    const auto& n = path_names();
    return std::find(n.begin(), n.end(), name) != n.end();
}
bool is_gesture_name(const std::string& name) {
    const auto& n = gesture_names();
    return std::find(n.begin(), n.end(), name) != n.end();
}

std::vector<std::pair<std::string, std::string>> all_pairs() {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& p : path_names())
        for (const auto& g : gesture_names()) out.emplace_back(p, g);
    return out;
}

ConceptSpec sample_concept(const std::string& name, Rng& rng) {
    ConceptSpec c;
    c.name = name;
    if (is_path_name(name)) {
        c.family = Family::Path;
        if (name == "straight") {
            c.params["speed"] = rng.uniform(0.07, 0.14);
            c.params["heading"] = rng.uniform(0.0, kTau);
        } else if (name == "circle") {
            c.params["radius"] = rng.uniform(1.0, 3.0);
            f64 turns = rng.uniform(0.75, 1.5);
            c.params["turns"] = rng.bernoulli(0.5) ? turns : -turns;
            c.params["phase"] = rng.uniform(0.0, kTau);
        } else if (name == "zigzag") {
            c.params["speed"] = rng.uniform(0.07, 0.14);
            c.params["heading"] = rng.uniform(0.0, kTau);
            c.params["zig_angle"] = rng.uniform(0.7, 1.2);
            c.params["period"] = static_cast<f64>(rng.uniform_int(10, 16));
        }
        // stop: no parameters
    } else if (is_gesture_name(name)) {
        c.family = Family::Gesture;
        if (name == "wave_left" || name == "wave_right") {
            c.params["amplitude"] = rng.uniform(0.6, 1.8);
            c.params["cycles"] = rng.uniform(2.0, 5.0);
            c.params["phase"] = rng.uniform(0.0, kTau);
        } else if (name == "raise_both") {
            c.params["amplitude"] = rng.uniform(0.6, 1.8);
        }
        // idle: no parameters
    } else {
        fail("sample_concept: unknown concept name '", name, "'");
    }
    return c;
}

namespace {

f64 param(const ConceptSpec& c, const std::string& key, std::optional<f64> fallback = {}) {
    auto it = c.params.find(key);
    if (it != c.params.end()) return it->second;
    if (fallback) return *fallback;
    fail("synth_concept_motion: concept '", c.name, "' missing parameter '", key, "'");
}

// Shift root channels to zero temporal mean. Keeps per-channel dataset means
// centered so the generator mixture mean is analytic (zero for the root).
void recenter_root(Array<f32>& m, int length) {
    for (int ch = 0; ch < 2; ++ch) {
        f64 s = 0;
        for (int t = 0; t < length; ++t) s += m.data[static_cast<size_t>(t) * kChannels + ch];
        f32 shift = static_cast<f32>(s / length);
        for (int t = 0; t < length; ++t) m.data[static_cast<size_t>(t) * kChannels + ch] -= shift;
    }
}

} // namespace

Array<f32> synth_concept_motion(const ConceptSpec& c, int length) {
    if (length < 8) fail("synth_concept_motion: length must be >= 8, got ", length);
    Array<f32> m({length, kChannels});
    auto at = [&](int t, int ch) -> f32& { return m.data[static_cast<size_t>(t) * kChannels + ch]; };

    if (c.family == Family::Path) {
        if (c.name == "straight") {
            f64 v = param(c, "speed");
            f64 h = param(c, "heading", 0.0);
            for (int t = 0; t < length; ++t) {
                at(t, 0) = static_cast<f32>(v * t * std::cos(h));
                at(t, 1) = static_cast<f32>(v * t * std::sin(h));
            }
        } else if (c.name == "circle") {
            f64 r = param(c, "radius");
            f64 turns = param(c, "turns", 1.0);
            f64 phase = param(c, "phase", 0.0);
            f64 omega = kTau * turns / (length - 1);
            // starts at the origin: center = -r * (cos phase, sin phase)
            for (int t = 0; t < length; ++t) {
                at(t, 0) = static_cast<f32>(r * (std::cos(phase + omega * t) - std::cos(phase)));
                at(t, 1) = static_cast<f32>(r * (std::sin(phase + omega * t) - std::sin(phase)));
            }
        } else if (c.name == "zigzag") {
            f64 v = param(c, "speed");
            f64 h = param(c, "heading", 0.0);
            f64 zig = param(c, "zig_angle");
            int period = static_cast<int>(param(c, "period", 12.0));
            f64 x = 0, y = 0;
            for (int t = 1; t < length; ++t) {
                int segment = (t - 1) / period;
                f64 dir = h + (segment % 2 == 0 ? zig : -zig);
                x += v * std::cos(dir);
                y += v * std::sin(dir);
                at(t, 0) = static_cast<f32>(x);
                at(t, 1) = static_cast<f32>(y);
            }
        } else if (c.name != "stop") {
            fail("synth_concept_motion: unknown concept name '", c.name, "'");
        }
        recenter_root(m, length);
    } else {
        if (c.name == "wave_left" || c.name == "wave_right") {
            f64 a = param(c, "amplitude");
            f64 cycles = param(c, "cycles", 3.0);
            f64 phase = param(c, "phase", 0.0);
            int ch0 = c.name == "wave_left" ? 2 : 4;
            f64 omega = kTau * cycles / (length - 1);
            for (int t = 0; t < length; ++t) {
                at(t, ch0) = static_cast<f32>(a * std::sin(omega * t + phase));
                at(t, ch0 + 1) = static_cast<f32>(0.6 * a * std::sin(omega * t + phase + kTau / 4));
            }
        } else if (c.name == "raise_both") {
            f64 a = param(c, "amplitude");
            for (int t = 0; t < length; ++t) {
                f32 level = static_cast<f32>(a * t / (length - 1));
                for (int ch = 2; ch < kChannels; ++ch) at(t, ch) = level;
            }
        } else if (c.name != "idle") {
            fail("synth_concept_motion: unknown concept name '", c.name, "'");
        }
    }
    return m;
}

Array<f32> compose_pair(const Array<f32>& path_motion, const Array<f32>& gesture_motion) {
    if (path_motion.shape != gesture_motion.shape || path_motion.shape.size() != 2 ||
        path_motion.shape[1] != kChannels)
        fail("compose_pair: shape mismatch ", shape_str(path_motion.shape), " vs ",
             shape_str(gesture_motion.shape));
    int length = path_motion.shape[0];
    for (int t = 0; t < length; ++t)
        for (int ch = 2; ch < kChannels; ++ch)
            if (std::abs(path_motion.data[static_cast<size_t>(t) * kChannels + ch]) > 1e-9f)
                fail("compose_pair: path input has active limb channels");
    for (int t = 0; t < length; ++t)
        for (int ch = 0; ch < 2; ++ch)
            if (std::abs(gesture_motion.data[static_cast<size_t>(t) * kChannels + ch] -
                         gesture_motion.data[static_cast<size_t>(ch)]) > 1e-9f)
                fail("compose_pair: gesture input root is not stationary");
    Array<f32> out({length, kChannels});
    for (int t = 0; t < length; ++t) {
        for (int ch = 0; ch < 2; ++ch)
            out.data[static_cast<size_t>(t) * kChannels + ch] =
                path_motion.data[static_cast<size_t>(t) * kChannels + ch];
        for (int ch = 2; ch < kChannels; ++ch)
            out.data[static_cast<size_t>(t) * kChannels + ch] =
                gesture_motion.data[static_cast<size_t>(t) * kChannels + ch];
    }
    return out;
}

std::pair<std::string, std::string> decompose_label(const std::string& path,
                                                    const std::string& gesture) {
    if (!is_path_name(path) || !is_gesture_name(gesture))
        fail("decompose_label: unknown pair (", path, ", ", gesture, ")");
    return {path, gesture};
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

namespace {

std::vector<std::array<f64, 2>> smoothed_root(const Array<f32>& m, int window = 5) {
    int length = m.shape[0];
    std::vector<std::array<f64, 2>> out(static_cast<size_t>(length));
    int half = window / 2;
    for (int t = 0; t < length; ++t) {
        f64 sx = 0, sy = 0;
        int n = 0;
        for (int u = std::max(0, t - half); u <= std::min(length - 1, t + half); ++u) {
            sx += m.data[static_cast<size_t>(u) * kChannels + 0];
            sy += m.data[static_cast<size_t>(u) * kChannels + 1];
            ++n;
        }
        out[static_cast<size_t>(t)] = {sx / n, sy / n};
    }
    return out;
}

f64 wrap_angle(f64 a) {
    while (a > std::numbers::pi) a -= kTau;
    while (a <= -std::numbers::pi) a += kTau;
    return a;
}

std::string classify_path(const Array<f32>& m) {
    auto p = smoothed_root(m);
    int length = static_cast<int>(p.size());

    f64 min_x = p[0][0], max_x = p[0][0], min_y = p[0][1], max_y = p[0][1];
    for (const auto& q : p) {
        min_x = std::min(min_x, q[0]);
        max_x = std::max(max_x, q[0]);
        min_y = std::min(min_y, q[1]);
        max_y = std::max(max_y, q[1]);
    }
    f64 bbox = std::hypot(max_x - min_x, max_y - min_y);
    if (bbox < kStopBboxDiag) return "stop";

    // rms distance from the principal axis through the centroid
    f64 cx = 0, cy = 0;
    for (const auto& q : p) {
        cx += q[0];
        cy += q[1];
    }
    cx /= length;
    cy /= length;
    f64 sxx = 0, sxy = 0, syy = 0;
    for (const auto& q : p) {
        f64 dx = q[0] - cx, dy = q[1] - cy;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    f64 tr = sxx + syy, det = sxx * syy - sxy * sxy;
    f64 disc = std::sqrt(std::max(0.0, tr * tr / 4 - det));
    f64 lambda_minor = std::max(0.0, tr / 2 - disc);
    f64 rms_perp = std::sqrt(lambda_minor / length);
    if (rms_perp < kStraightResidual) return "straight";

    // signed turning along the smoothed track
    f64 pos_turn = 0, neg_turn = 0;
    f64 prev_heading = 0;
    bool have_heading = false;
    for (int t = 0; t + 1 < length; ++t) {
        f64 dx = p[static_cast<size_t>(t) + 1][0] - p[static_cast<size_t>(t)][0];
        f64 dy = p[static_cast<size_t>(t) + 1][1] - p[static_cast<size_t>(t)][1];
        if (std::hypot(dx, dy) < 1e-4) continue;
        f64 h = std::atan2(dy, dx);
        if (have_heading) {
            f64 turn = wrap_angle(h - prev_heading);
            if (turn >= 0)
                pos_turn += turn;
            else
                neg_turn -= turn;
        }
        prev_heading = h;
        have_heading = true;
    }
    f64 total = pos_turn + neg_turn;
    if (total < 1e-9) return "straight";
    f64 consistency = std::abs(pos_turn - neg_turn) / total;
    return consistency > kTurnConsistency ? "circle" : "zigzag";
}

std::string classify_gesture(const Array<f32>& m) {
    int length = m.shape[0];
    if (rest_limb_level(m) < kRestThreshold) return "idle";

    // raise_both: every limb channel tracks time
    bool all_ramp = true;
    for (int ch = 2; ch < kChannels && all_ramp; ++ch) {
        f64 mean = 0;
        for (int t = 0; t < length; ++t) mean += m.data[static_cast<size_t>(t) * kChannels + ch];
        mean /= length;
        f64 tmean = (length - 1) / 2.0;
        f64 cov = 0, var_c = 0, var_t = 0;
        for (int t = 0; t < length; ++t) {
            f64 dc = m.data[static_cast<size_t>(t) * kChannels + ch] - mean;
            f64 dt = t - tmean;
            cov += dc * dt;
            var_c += dc * dc;
            var_t += dt * dt;
        }
        f64 std_c = std::sqrt(var_c / length);
        f64 corr = std_c < kActiveChannelStd ? 0.0 : cov / std::sqrt(var_c * var_t);
        if (corr < kRampCorrelation) all_ramp = false;
    }
    if (all_ramp) return "raise_both";

    auto side_energy = [&](int ch0) {
        f64 e = 0;
        for (int ch = ch0; ch < ch0 + 2; ++ch) {
            f64 mean = 0;
            for (int t = 0; t < length; ++t) mean += m.data[static_cast<size_t>(t) * kChannels + ch];
            mean /= length;
            for (int t = 0; t < length; ++t) {
                f64 d = m.data[static_cast<size_t>(t) * kChannels + ch] - mean;
                e += d * d;
            }
        }
        return e;
    };
    return side_energy(2) > side_energy(4) ? "wave_left" : "wave_right";
}

} // namespace

std::pair<std::string, std::string> oracle_classify(const Array<f32>& motion) {
    if (motion.shape.size() != 2 || motion.shape[1] != kChannels || motion.shape[0] < 8)
        fail("oracle_classify: expected [L>=8,", kChannels, "], got ", shape_str(motion.shape));
    if (!all_finite(std::span<const f32>(motion.data))) fail("oracle_classify: non-finite motion");
    return {classify_path(motion), classify_gesture(motion)};
}

f64 rest_limb_level(const Array<f32>& motion) {
    int length = motion.shape[0];
    f64 s = 0;
    for (int t = 0; t < length; ++t)
        for (int ch = 2; ch < kChannels; ++ch)
            s += std::abs(motion.data[static_cast<size_t>(t) * kChannels + ch]);
    return s / (static_cast<f64>(length) * (kChannels - 2));
}

// ---------------------------------------------------------------------------
// dataset generation & io
// ---------------------------------------------------------------------------

Array<f32> Dataset::normalized(const Array<f32>& motion) const {
    Array<f32> out = motion;
    int length = motion.shape[0];
    for (int t = 0; t < length; ++t)
        for (int ch = 0; ch < kChannels; ++ch) {
            auto& v = out.data[static_cast<size_t>(t) * kChannels + ch];
            v = static_cast<f32>((v - norm_mean[static_cast<size_t>(ch)]) /
                                 norm_std[static_cast<size_t>(ch)]);
        }
    return out;
}

Array<f32> Dataset::denormalized(const Array<f32>& motion) const {
    Array<f32> out = motion;
    int length = motion.shape[0];
    for (int t = 0; t < length; ++t)
        for (int ch = 0; ch < kChannels; ++ch) {
            auto& v = out.data[static_cast<size_t>(t) * kChannels + ch];
            v = static_cast<f32>(v * norm_std[static_cast<size_t>(ch)] +
                                 norm_mean[static_cast<size_t>(ch)]);
        }
    return out;
}

namespace {

struct SampleOut {
    Array<f32> motion;
    LabeledSample label;
};

SampleOut make_sample(const std::pair<std::string, std::string>& pair, Rng rng,
                      const std::string& id, const std::string& split) {
    ConceptSpec pc = sample_concept(pair.first, rng);
    ConceptSpec gc = sample_concept(pair.second, rng);
    Array<f32> motion =
        compose_pair(synth_concept_motion(pc, kFrames), synth_concept_motion(gc, kFrames));
    // generator-output invariant: documented parameter ranges keep every
    // channel within the cap
    for (f32 v : motion.data)
        if (std::abs(v) > kChannelMax)
            fail("generate_dataset: channel value ", v, " exceeds bound ", kChannelMax);
    LabeledSample label;
    label.id = id;
    label.path = pair.first;
    label.gesture = pair.second;
    label.split = split;
    for (const auto& [k, v] : pc.params) label.params["path_" + k] = v;
    for (const auto& [k, v] : gc.params) label.params["gesture_" + k] = v;
    return {std::move(motion), std::move(label)};
}

std::string sample_id(const std::string& split, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%05d", split.c_str(), i);
    return buf;
}

} // namespace

Dataset generate_dataset(const DatasetConfig& cfg) {
    if (cfg.heldout_pairs.size() < 2)
        fail("generate_dataset: at least 2 held-out pairs required, got ",
             cfg.heldout_pairs.size());
    auto grid = all_pairs();
    for (const auto& hp : cfg.heldout_pairs)
        if (std::find(grid.begin(), grid.end(), hp) == grid.end())
            fail("generate_dataset: held-out pair (", hp.first, ", ", hp.second,
                 ") not in the 16-pair grid");
    std::vector<std::pair<std::string, std::string>> train_pairs;
    for (const auto& p : grid)
        if (std::find(cfg.heldout_pairs.begin(), cfg.heldout_pairs.end(), p) ==
            cfg.heldout_pairs.end())
            train_pairs.push_back(p);
    if (train_pairs.empty()) fail("generate_dataset: no training pairs remain");

    Dataset ds;
    ds.config = cfg;
    Rng master(cfg.seed);

    auto fill_split = [&](const std::string& split, int count, uint64_t stream_base,
                          const std::vector<std::pair<std::string, std::string>>& pairs,
                          std::vector<Array<f32>>& motions, std::vector<LabeledSample>& labels) {
        motions.reserve(static_cast<size_t>(count));
        labels.reserve(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) {
            const auto& pair = pairs[static_cast<size_t>(i) % pairs.size()];
            auto s = make_sample(pair, master.fork(stream_base + static_cast<uint64_t>(i)),
                                 sample_id(split, i), split);
            motions.push_back(std::move(s.motion));
            labels.push_back(std::move(s.label));
        }
    };
    fill_split("train", cfg.train_count, 0x100000, train_pairs, ds.train, ds.train_labels);
    fill_split("test", cfg.test_count, 0x200000, train_pairs, ds.test, ds.test_labels);
    fill_split("heldout", cfg.heldout_count, 0x300000, cfg.heldout_pairs, ds.heldout,
               ds.heldout_labels);

    // normalization statistics from the train split only
    std::array<f64, kChannels> sum{}, sumsq{};
    int64_t n = 0;
    for (const auto& m : ds.train)
        for (int t = 0; t < kFrames; ++t, ++n)
            for (int ch = 0; ch < kChannels; ++ch) {
                f64 v = m.data[static_cast<size_t>(t) * kChannels + ch];
                sum[static_cast<size_t>(ch)] += v;
                sumsq[static_cast<size_t>(ch)] += v * v;
            }
    for (int ch = 0; ch < kChannels; ++ch) {
        f64 mean = sum[static_cast<size_t>(ch)] / static_cast<f64>(n);
        f64 var = sumsq[static_cast<size_t>(ch)] / static_cast<f64>(n) - mean * mean;
        ds.norm_mean[static_cast<size_t>(ch)] = mean;
        ds.norm_std[static_cast<size_t>(ch)] = std::max(std::sqrt(std::max(var, 0.0)), 1e-6);
    }
    return ds;
}

void write_dmg1(const std::string& path, std::span<const Array<f32>> motions) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail("write_dmg1: cannot open '", path, "'");
    f.write("DMG1", 4);
    auto put_u32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(static_cast<uint32_t>(motions.size()));
    uint32_t length = motions.empty() ? kFrames : static_cast<uint32_t>(motions[0].shape[0]);
    put_u32(length);
    put_u32(kChannels);
    for (const auto& m : motions) {
        if (m.shape.size() != 2 || m.shape[0] != static_cast<int>(length) ||
            m.shape[1] != kChannels)
            fail("write_dmg1: motion shape ", shape_str(m.shape), " does not match container");
        f.write(reinterpret_cast<const char*>(m.data.data()),
                static_cast<std::streamsize>(m.data.size() * sizeof(f32)));
    }
    if (!f) fail("write_dmg1: write failed for '", path, "'");
}

std::vector<Array<f32>> read_dmg1(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileNotFound(path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "DMG1", 4) != 0) fail("read_dmg1: bad magic in '", path, "'");
    auto get_u32 = [&]() {
        uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    uint32_t count = get_u32(), length = get_u32(), channels = get_u32();
    if (!f || channels != kChannels) fail("read_dmg1: unexpected layout in '", path, "'");
    std::vector<Array<f32>> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Array<f32> m({static_cast<int>(length), static_cast<int>(channels)});
        f.read(reinterpret_cast<char*>(m.data.data()),
               static_cast<std::streamsize>(m.data.size() * sizeof(f32)));
        if (!f) fail("read_dmg1: truncated file '", path, "'");
        out.push_back(std::move(m));
    }
    return out;
}

namespace {

json label_to_json(const LabeledSample& s) {
    json j;
    j["id"] = s.id;
    j["path"] = s.path;
    j["gesture"] = s.gesture;
    j["split"] = s.split;
    j["params"] = s.params;
    return j;
}

LabeledSample label_from_json(const json& j) {
    LabeledSample s;
    s.id = j.at("id").get<std::string>();
    s.path = j.at("path").get<std::string>();
    s.gesture = j.at("gesture").get<std::string>();
    s.split = j.at("split").get<std::string>();
    if (j.contains("params"))
        for (auto it = j["params"].begin(); it != j["params"].end(); ++it)
            s.params[it.key()] = it.value().get<f64>();
    return s;
}

} // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    write_dmg1((fs::path(dir) / "train.dmg1").string(), ds.train);
    write_dmg1((fs::path(dir) / "test.dmg1").string(), ds.test);
    write_dmg1((fs::path(dir) / "heldout.dmg1").string(), ds.heldout);

    {
        std::ofstream f(fs::path(dir) / "labels.jsonl", std::ios::trunc);
        if (!f) fail("save_dataset: cannot write labels.jsonl");
        for (const auto* split : {&ds.train_labels, &ds.test_labels, &ds.heldout_labels})
            for (const auto& s : *split) f << label_to_json(s).dump() << '\n';
    }

    json manifest;
    manifest["version"] = 1;
    manifest["seed"] = ds.config.seed;
    manifest["l"] = kFrames;
    manifest["d_m"] = kChannels;
    manifest["counts"] = {{"train", ds.config.train_count},
                          {"test", ds.config.test_count},
                          {"heldout", ds.config.heldout_count}};
    json hp = json::array();
    for (const auto& p : ds.config.heldout_pairs) hp.push_back({p.first, p.second});
    manifest["held_out_pairs"] = hp;
    manifest["vocab"] = Vocabulary::instance().tokens();
    manifest["norm_mean"] = ds.norm_mean;
    manifest["norm_std"] = ds.norm_std;
    std::ofstream f(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!f) fail("save_dataset: cannot write manifest.json");
    f << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw FileNotFound((fs::path(dir) / "manifest.json").string());
    json manifest = json::parse(mf);

    Dataset ds;
    ds.config.seed = manifest.at("seed").get<uint64_t>();
    ds.config.train_count = manifest.at("counts").at("train").get<int>();
    ds.config.test_count = manifest.at("counts").at("test").get<int>();
    ds.config.heldout_count = manifest.at("counts").at("heldout").get<int>();
    ds.config.heldout_pairs.clear();
    for (const auto& p : manifest.at("held_out_pairs"))
        ds.config.heldout_pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
    for (int ch = 0; ch < kChannels; ++ch) {
        ds.norm_mean[static_cast<size_t>(ch)] =
            manifest.at("norm_mean")[static_cast<size_t>(ch)].get<f64>();
        ds.norm_std[static_cast<size_t>(ch)] =
            manifest.at("norm_std")[static_cast<size_t>(ch)].get<f64>();
    }

    ds.train = read_dmg1((fs::path(dir) / "train.dmg1").string());
    ds.test = read_dmg1((fs::path(dir) / "test.dmg1").string());
    ds.heldout = read_dmg1((fs::path(dir) / "heldout.dmg1").string());

    std::ifstream lf(fs::path(dir) / "labels.jsonl");
    if (!lf) throw FileNotFound((fs::path(dir) / "labels.jsonl").string());
    std::string line;
    while (std::getline(lf, line)) {
        if (line.empty()) continue;
        LabeledSample s = label_from_json(json::parse(line));
        if (s.split == "train")
            ds.train_labels.push_back(std::move(s));
        else if (s.split == "test")
            ds.test_labels.push_back(std::move(s));
        else
            ds.heldout_labels.push_back(std::move(s));
    }
    if (ds.train_labels.size() != ds.train.size() || ds.test_labels.size() != ds.test.size() ||
        ds.heldout_labels.size() != ds.heldout.size())
        fail("load_dataset: label/motion count mismatch in '", dir, "'");
    return ds;
}

uint64_t manifest_fingerprint(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!f) throw FileNotFound((fs::path(dir) / "manifest.json").string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes.data(), bytes.size());
}

} // namespace dmg
