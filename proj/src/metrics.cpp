#include "dmg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace dmg {

// ---------------------------------------------------------------------------
// evaluator
// ---------------------------------------------------------------------------

void init_evaluator(ParameterStore& store, const EvaluatorConfig& cfg,
                    const TextEncoderConfig& text_cfg, Rng& rng) {
    int w = cfg.width;
    auto conv = [&](const std::string& p, int cin, int cout, int k) {
        init_linear(store, p, k * cin, cout, rng, 1.0 / std::sqrt(static_cast<f64>(k * cin)));
    };
    conv("eval.m.c0", kChannels, w, 4);
    conv("eval.m.c1", w, w, 4);
    conv("eval.m.c2", w, w, 4);
    init_layernorm(store, "eval.m.ln", w);
    init_linear(store, "eval.m.out", w, cfg.feat_dim, rng, 0.05);

    init_linear(store, "eval.t.h", text_cfg.d_c, w, rng, 0.05);
    init_linear(store, "eval.t.out", w, cfg.feat_dim, rng, 0.05);
}

template <typename T>
Var evaluator_motion_feat(Tape<T>& tp, ParamLoader<T>& P, const EvaluatorConfig& cfg, Var x) {
    auto conv = [&](const std::string& p, Var h, int k, int s, int pad) {
        Var cols = tp.im2col(h, k, s, pad);
        return linear3(tp, P, p, cols);
    };
    Var h = tp.gelu(conv("eval.m.c0", x, 4, 2, 1));  // L/2
    h = tp.gelu(conv("eval.m.c1", h, 4, 2, 1));      // L/4
    h = tp.gelu(conv("eval.m.c2", h, 4, 2, 1));      // L/8
    h = layer_norm3(tp, P, "eval.m.ln", h);
    Var pooled = tp.mean_axis(h, 1); // [B, W]
    return tp.linear(pooled, P("eval.m.out.w"), P("eval.m.out.b"));
}
template Var evaluator_motion_feat<f32>(Tape<f32>&, ParamLoader<f32>&, const EvaluatorConfig&, Var);
template Var evaluator_motion_feat<f64>(Tape<f64>&, ParamLoader<f64>&, const EvaluatorConfig&, Var);

template <typename T>
Var evaluator_text_feat(Tape<T>& tp, ParamLoader<T>& P, const EvaluatorConfig& cfg,
                        const TextEncoderConfig& text_cfg, std::span<const int> ids, int batch) {
    Var enc = TextEncoder::encode(tp, P, text_cfg, ids, batch); // [B, Lc, dc]
    Var pooled = tp.mean_axis(enc, 1);                          // [B, dc]
    Var h = tp.gelu(tp.linear(pooled, P("eval.t.h.w"), P("eval.t.h.b")));
    return tp.linear(h, P("eval.t.out.w"), P("eval.t.out.b"));
}
template Var evaluator_text_feat<f32>(Tape<f32>&, ParamLoader<f32>&, const EvaluatorConfig&,
                                      const TextEncoderConfig&, std::span<const int>, int);
template Var evaluator_text_feat<f64>(Tape<f64>&, ParamLoader<f64>&, const EvaluatorConfig&,
                                      const TextEncoderConfig&, std::span<const int>, int);

namespace {

// rows scaled to unit norm (for the contrastive loss only)
template <typename T>
Var normalize_rows(Tape<T>& tp, Var x) {
    const Shape& s = tp.shape(x);
    Var sq = tp.mul(x, x);
    Var norms = tp.sqrt(tp.add_scalar(tp.smul(tp.mean_axis(sq, 1), static_cast<T>(s[1])), T(1e-12)));
    Array<T> ones({s[0]});
    std::fill(ones.data.begin(), ones.data.end(), T(1));
    return tp.scale_rows(x, tp.div(tp.leaf(ones), norms));
}

} // namespace

EvaluatorTrainResult train_evaluator(const Dataset& ds, const EvaluatorConfig& cfg,
                                     const TextEncoderConfig& text_cfg,
                                     const std::string& log_path) {
    if (ds.train.empty()) fail("train_evaluator: empty train split");
    EvaluatorTrainResult res;
    Rng rng(cfg.seed);
    TextEncoder::init_params(res.store, text_cfg, rng);
    init_evaluator(res.store, cfg, text_cfg, rng);

    int n = static_cast<int>(ds.train.size());

    const auto& vocab = Vocabulary::instance();
    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::trunc);
        if (!log) fail("train_evaluator: cannot open log '", log_path, "'");
    }
    AdamwConfig opt;
    opt.lr = cfg.lr;

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    ParameterStore last_good = res.store;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle(std::span<int>(order), rng);
        f64 loss_sum = 0;
        int steps = 0;
        for (int start = 0; start + cfg.batch <= n; start += cfg.batch) {
            int b = cfg.batch;
            Array<f32> xb({b, kFrames, kChannels});
            std::vector<int> ids;
            ids.reserve(static_cast<size_t>(b) * text_cfg.l_c);
            for (int i = 0; i < b; ++i) {
                int idx = order[static_cast<size_t>(start + i)];
                const auto& lab = ds.train_labels[static_cast<size_t>(idx)];
                // Three view kinds. Half the views are the full motion with
                // its holistic pair text; the rest pair one decomposed
                // concept text with the motion restricted to that concept's
                // channels (the other family's channels at rest). The frozen
                // encoder later serves both holistic and decomposed
                // conditioning, and concept features inherit the channel
                // split.
                Array<f32> view = ds.train[static_cast<size_t>(idx)];
                std::vector<std::string> words;
                if (rng.bernoulli(0.5)) {
                    words = {lab.path, lab.gesture};
                } else {
                    auto [dp, dg] = decompose_label(lab.path, lab.gesture);
                    bool path_view = rng.bernoulli(0.5);
                    words = {path_view ? dp : dg};
                    int lo = path_view ? 2 : 0;
                    int hi = path_view ? kChannels : 2;
                    for (int t = 0; t < kFrames; ++t)
                        for (int ch = lo; ch < hi; ++ch)
                            view.data[static_cast<size_t>(t) * kChannels + ch] = 0.0f;
                }
                Array<f32> nm = ds.normalized(view);
                std::copy_n(nm.data.begin(), nm.data.size(),
                            xb.data.begin() + static_cast<int64_t>(i) * kFrames * kChannels);
                auto row = vocab.encode_padded(words, text_cfg.l_c);
                ids.insert(ids.end(), row.begin(), row.end());
            }
            Tape<f32> tp;
            ParamLoader<f32> P(tp, res.store, true);
            Var mf = normalize_rows(tp, evaluator_motion_feat(tp, P, cfg, tp.leaf(xb)));
            Var tf = normalize_rows(tp, evaluator_text_feat(tp, P, cfg, text_cfg, ids, b));
            Var logits = tp.smul(tp.matmul(mf, tp.transpose(tf)), 1.0f / cfg.temperature);
            std::vector<int> diag(static_cast<size_t>(b));
            for (int i = 0; i < b; ++i) diag[static_cast<size_t>(i)] = i;
            Var loss = tp.smul(tp.add(tp.cross_entropy_rows(logits, diag),
                                      tp.cross_entropy_rows(tp.transpose(logits), diag)),
                               0.5f);
            f32 lval = tp.scalar(loss);
            if (!std::isfinite(lval)) {
                res.store = last_good;
                res.aborted = true;
                return res;
            }
            tp.backward(loss);
            res.store.adamw_step(P.grads(), opt);
            loss_sum += lval;
            ++steps;
        }
        EvalEpochLog entry{epoch, loss_sum / std::max(steps, 1)};
        res.log.push_back(entry);
        if (log)
            log << nlohmann::json{{"epoch", entry.epoch}, {"loss", entry.loss}}.dump()
                << std::endl;
        last_good = res.store;
    }
    return res;
}

void save_evaluator(const ParameterStore& store, const EvaluatorConfig& cfg,
                    const TextEncoderConfig& text_cfg, const std::string& path) {
    store.save(path);
    nlohmann::json meta;
    meta["feat_dim"] = cfg.feat_dim;
    meta["width"] = cfg.width;
    meta["temperature"] = cfg.temperature;
    meta["text"] = {{"l_c", text_cfg.l_c},
                    {"d_c", text_cfg.d_c},
                    {"heads", text_cfg.heads},
                    {"ff_mult", text_cfg.ff_mult}};
    std::ofstream f(path + ".json", std::ios::trunc);
    if (!f) fail("save_evaluator: cannot write '", path, ".json'");
    f << meta.dump(2) << '\n';
}

LoadedEvaluator load_evaluator(const std::string& path) {
    std::ifstream f(path + ".json");
    if (!f) throw FileNotFound(path + ".json");
    nlohmann::json meta = nlohmann::json::parse(f);
    LoadedEvaluator out;
    out.cfg.feat_dim = meta.at("feat_dim").get<int>();
    out.cfg.width = meta.at("width").get<int>();
    out.cfg.temperature = meta.at("temperature").get<f32>();
    const auto& t = meta.at("text");
    out.text_cfg = {t.at("l_c").get<int>(), t.at("d_c").get<int>(), t.at("heads").get<int>(),
                    t.at("ff_mult").get<int>()};
    out.store.load(path);
    return out;
}

Array<f32> motion_features(const ParameterStore& store, const EvaluatorConfig& cfg,
                           const Dataset& ds, std::span<const Array<f32>> motions) {
    int n = static_cast<int>(motions.size());
    Array<f32> out({n, cfg.feat_dim});
    const int chunk = 256;
    for (int start = 0; start < n; start += chunk) {
        int b = std::min(chunk, n - start);
        Array<f32> xb({b, kFrames, kChannels});
        for (int i = 0; i < b; ++i) {
            Array<f32> nm = ds.normalized(motions[static_cast<size_t>(start + i)]);
            std::copy_n(nm.data.begin(), nm.data.size(),
                        xb.data.begin() + static_cast<int64_t>(i) * kFrames * kChannels);
        }
        Tape<f32> tp;
        ParamLoader<f32> P(tp, store, false);
        Var mf = evaluator_motion_feat(tp, P, cfg, tp.leaf(xb));
        auto v = tp.val(mf);
        std::copy_n(v.begin(), v.size(), out.data.begin() + static_cast<int64_t>(start) * cfg.feat_dim);
    }
    return out;
}

Array<f32> text_features(const ParameterStore& store, const EvaluatorConfig& cfg,
                         const TextEncoderConfig& text_cfg,
                         std::span<const std::pair<std::string, std::string>> labels) {
    const auto& vocab = Vocabulary::instance();
    int n = static_cast<int>(labels.size());
    std::vector<int> ids;
    ids.reserve(static_cast<size_t>(n) * text_cfg.l_c);
    for (const auto& [p, g] : labels) {
        std::vector<std::string> words{p, g};
        auto row = vocab.encode_padded(words, text_cfg.l_c);
        ids.insert(ids.end(), row.begin(), row.end());
    }
    Tape<f32> tp;
    ParamLoader<f32> P(tp, store, false);
    Var tf = evaluator_text_feat(tp, P, cfg, text_cfg, ids, n);
    return tp.val_array(tf);
}

// ---------------------------------------------------------------------------
// FID
// ---------------------------------------------------------------------------

namespace {

// cyclic Jacobi eigenvalues of a symmetric matrix (f64, in place copy)
std::vector<f64> symmetric_eigenvalues(std::vector<f64> a, int n) {
    for (int sweep = 0; sweep < 100; ++sweep) {
        f64 off = 0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[static_cast<size_t>(p) * n + q] * a[static_cast<size_t>(p) * n + q];
        if (off < 1e-22) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                f64 apq = a[static_cast<size_t>(p) * n + q];
                if (std::abs(apq) < 1e-300) continue;
                f64 app = a[static_cast<size_t>(p) * n + p];
                f64 aqq = a[static_cast<size_t>(q) * n + q];
                f64 theta = (aqq - app) / (2 * apq);
                f64 t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                f64 c = 1.0 / std::sqrt(t * t + 1);
                f64 s = t * c;
                for (int k = 0; k < n; ++k) {
                    f64 akp = a[static_cast<size_t>(k) * n + p];
                    f64 akq = a[static_cast<size_t>(k) * n + q];
                    a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
                    a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    f64 apk = a[static_cast<size_t>(p) * n + k];
                    f64 aqk = a[static_cast<size_t>(q) * n + k];
                    a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
                    a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
                }
            }
    }
    std::vector<f64> eig(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eig[static_cast<size_t>(i)] = a[static_cast<size_t>(i) * n + i];
    return eig;
}

struct Moments {
    std::vector<f64> mean;      // [d]
    std::vector<f64> cov;       // [d*d]
    int d = 0;
};

Moments feature_moments(const Array<f32>& feats) {
    if (feats.shape.size() != 2 || feats.shape[0] < 2)
        fail("fid: need at least 2 samples per side, got ", shape_str(feats.shape));
    int n = feats.shape[0], d = feats.shape[1];
    Moments m;
    m.d = d;
    m.mean.assign(static_cast<size_t>(d), 0.0);
    m.cov.assign(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) m.mean[static_cast<size_t>(j)] += feats.data[static_cast<size_t>(i) * d + j];
    for (auto& v : m.mean) v /= n;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            f64 dj = feats.data[static_cast<size_t>(i) * d + j] - m.mean[static_cast<size_t>(j)];
            for (int k = j; k < d; ++k) {
                f64 dk = feats.data[static_cast<size_t>(i) * d + k] - m.mean[static_cast<size_t>(k)];
                m.cov[static_cast<size_t>(j) * d + k] += dj * dk;
            }
        }
    for (int j = 0; j < d; ++j)
        for (int k = j; k < d; ++k) {
            f64 v = m.cov[static_cast<size_t>(j) * d + k] / (n - 1);
            m.cov[static_cast<size_t>(j) * d + k] = v;
            m.cov[static_cast<size_t>(k) * d + j] = v;
        }
    return m;
}

} // namespace

f64 fid(const Array<f32>& real_feats, const Array<f32>& gen_feats) {
    Moments r = feature_moments(real_feats);
    Moments g = feature_moments(gen_feats);
    if (r.d != g.d) fail("fid: feature dimension mismatch ", r.d, " vs ", g.d);
    int d = r.d;

    f64 mean_term = 0;
    for (int j = 0; j < d; ++j) {
        f64 diff = g.mean[static_cast<size_t>(j)] - r.mean[static_cast<size_t>(j)];
        mean_term += diff * diff;
    }
    // product, then symmetrize before the eigendecomposition
    std::vector<f64> prod(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            f64 s = 0;
            for (int j = 0; j < d; ++j)
                s += g.cov[static_cast<size_t>(i) * d + j] * r.cov[static_cast<size_t>(j) * d + k];
            prod[static_cast<size_t>(i) * d + k] = s;
        }
    std::vector<f64> sym(static_cast<size_t>(d) * d);
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k)
            sym[static_cast<size_t>(i) * d + k] =
                0.5 * (prod[static_cast<size_t>(i) * d + k] + prod[static_cast<size_t>(k) * d + i]);
    auto eig = symmetric_eigenvalues(std::move(sym), d);
    f64 trace_sqrt = 0;
    for (f64 e : eig) {
        if (e < -1e-6) fail("fid: covariance product not PSD (eigenvalue ", e, ")");
        trace_sqrt += std::sqrt(std::max(e, 0.0));
    }
    f64 tr_g = 0, tr_r = 0;
    for (int j = 0; j < d; ++j) {
        tr_g += g.cov[static_cast<size_t>(j) * d + j];
        tr_r += r.cov[static_cast<size_t>(j) * d + j];
    }
    f64 value = mean_term + tr_g + tr_r - 2.0 * trace_sqrt;
    return std::max(value, 0.0); // clamp tiny negatives from the eigen solve
}

// ---------------------------------------------------------------------------
// retrieval & distance metrics
// ---------------------------------------------------------------------------

namespace {

f64 sq_dist(const f32* a, const f32* b, int d) {
    f64 s = 0;
    for (int j = 0; j < d; ++j) {
        f64 diff = static_cast<f64>(a[j]) - b[j];
        s += diff * diff;
    }
    return s;
}

} // namespace

RPrecision r_precision(const Array<f32>& motion_feats, const Array<f32>& text_feats,
                       int pool_size, Rng& rng) {
    if (motion_feats.shape != text_feats.shape)
        fail("r_precision: shape mismatch ", shape_str(motion_feats.shape), " vs ",
             shape_str(text_feats.shape));
    int n = motion_feats.shape[0], d = motion_feats.shape[1];
    if (pool_size < 2) fail("r_precision: pool size must be >= 2");
    if (n < pool_size)
        fail("r_precision: pool of ", pool_size, " needs at least ", pool_size,
             " samples, got ", n);

    RPrecision out;
    out.pool_size = pool_size;
    out.n = n;
    int top1 = 0, top2 = 0, top3 = 0;
    std::vector<char> used(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const f32* mf = motion_feats.data.data() + static_cast<int64_t>(i) * d;
        f64 gt_dist = sq_dist(mf, text_feats.data.data() + static_cast<int64_t>(i) * d, d);
        std::fill(used.begin(), used.end(), 0);
        used[static_cast<size_t>(i)] = 1;
        int rank = 1; // strict inequality: exact ties resolve for the ground truth
        for (int p = 0; p < pool_size - 1; ++p) {
            int j;
            do {
                j = static_cast<int>(rng.uniform_int(0, n - 1));
            } while (used[static_cast<size_t>(j)]);
            used[static_cast<size_t>(j)] = 1;
            f64 dist = sq_dist(mf, text_feats.data.data() + static_cast<int64_t>(j) * d, d);
            if (dist < gt_dist) ++rank;
        }
        top1 += rank <= 1;
        top2 += rank <= 2;
        top3 += rank <= 3;
    }
    out.top1 = static_cast<f64>(top1) / n;
    out.top2 = static_cast<f64>(top2) / n;
    out.top3 = static_cast<f64>(top3) / n;
    return out;
}

f64 mm_dist(const Array<f32>& motion_feats, const Array<f32>& text_feats) {
    if (motion_feats.shape != text_feats.shape)
        fail("mm_dist: shape mismatch ", shape_str(motion_feats.shape), " vs ",
             shape_str(text_feats.shape));
    int n = motion_feats.shape[0], d = motion_feats.shape[1];
    f64 s = 0;
    for (int i = 0; i < n; ++i)
        s += std::sqrt(sq_dist(motion_feats.data.data() + static_cast<int64_t>(i) * d,
                               text_feats.data.data() + static_cast<int64_t>(i) * d, d));
    return s / n;
}

f64 diversity(const Array<f32>& feats, int n_pairs, Rng& rng) {
    int n = feats.shape[0], d = feats.shape[1];
    if (n < 2 * n_pairs)
        fail("diversity: needs at least ", 2 * n_pairs, " features, got ", n);
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    shuffle(std::span<int>(idx), rng);
    f64 s = 0;
    for (int p = 0; p < n_pairs; ++p) {
        const f32* a = feats.data.data() + static_cast<int64_t>(idx[static_cast<size_t>(2 * p)]) * d;
        const f32* b = feats.data.data() + static_cast<int64_t>(idx[static_cast<size_t>(2 * p + 1)]) * d;
        s += std::sqrt(sq_dist(a, b, d));
    }
    return s / n_pairs;
}

f64 mmodality(std::span<const Array<f32>> per_text_feats, Rng& rng) {
    if (per_text_feats.empty()) fail("mmodality: no texts");
    f64 total = 0;
    for (const auto& feats : per_text_feats) {
        int n = feats.shape[0], d = feats.shape[1];
        if (n < 10) fail("mmodality: needs at least 10 repeats per text, got ", n);
        std::vector<int> idx(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
        shuffle(std::span<int>(idx), rng);
        int half = n / 2;
        f64 s = 0;
        for (int i = 0; i < half; ++i)
            s += std::sqrt(sq_dist(feats.data.data() + static_cast<int64_t>(idx[static_cast<size_t>(i)]) * d,
                                   feats.data.data() + static_cast<int64_t>(idx[static_cast<size_t>(half + i)]) * d,
                                   d));
        total += s / half;
    }
    return total / static_cast<f64>(per_text_feats.size());
}

f64 transition_distance(std::span<const Array<f32>> motions) {
    if (motions.empty()) fail("transition_distance: no motions");
    f64 total = 0;
    for (const auto& m : motions) {
        int length = m.shape[0], d = m.shape[1];
        f64 s = 0;
        for (int t = 0; t + 1 < length; ++t)
            s += std::sqrt(sq_dist(m.data.data() + static_cast<int64_t>(t + 1) * d,
                                   m.data.data() + static_cast<int64_t>(t) * d, d));
        total += s / (length - 1);
    }
    return total / static_cast<f64>(motions.size());
}

// ---------------------------------------------------------------------------
// decomposition / recombination scoring
// ---------------------------------------------------------------------------

DecompositionScores decomposition_scores(const DiffusionModel& model, const Dataset& ds,
                                         const VaeConfig& vae_cfg, const ParameterStore& vae_store,
                                         const ConditionLibrary& lib, int n_seeds, int steps,
                                         uint64_t seed) {
    DecompositionScores out;
    Rng root(seed);
    // decomposition over test labels, cycled
    int n_labels = static_cast<int>(ds.test_labels.size());
    if (n_labels == 0) fail("decomposition_scores: empty test split");
    int path_ok = 0, gesture_ok = 0, joint_ok = 0, rest_ok = 0;
    for (int i = 0; i < n_seeds; ++i) {
        const auto& lab = ds.test_labels[static_cast<size_t>(i % n_labels)];
        auto [cp, cg] = decompose_label(lab.path, lab.gesture);
        std::array<Array<f32>, 2> conds{lib.concept_emb(cp), lib.concept_emb(cg)};
        std::array<uint64_t, 2> seeds{root.u64(), root.u64()};
        auto chains = generate_decomposed(model, ds, vae_cfg, vae_store, conds, seeds, steps);
        auto [p0, g0] = oracle_classify(chains[0]);
        auto [p1, g1] = oracle_classify(chains[1]);
        bool pok = p0 == lab.path;
        bool gok = g1 == lab.gesture;
        path_ok += pok;
        gesture_ok += gok;
        joint_ok += pok && gok;
        rest_ok += rest_limb_level(chains[0]) < kRestThreshold;
    }
    out.n_decomposed = n_seeds;
    out.path_acc = static_cast<f64>(path_ok) / n_seeds;
    out.gesture_acc = static_cast<f64>(gesture_ok) / n_seeds;
    out.joint_acc = static_cast<f64>(joint_ok) / n_seeds;
    out.rest_fraction = static_cast<f64>(rest_ok) / n_seeds;

    // recombination over the held-out pairs
    const auto& held = ds.config.heldout_pairs;
    if (!held.empty()) {
        std::vector<std::vector<Array<f32>>> cond_sets;
        std::vector<std::pair<std::string, std::string>> expect;
        for (int i = 0; i < n_seeds; ++i) {
            const auto& pair = held[static_cast<size_t>(i) % held.size()];
            cond_sets.push_back(
                texts_condition(model, lib, {pair.first, pair.second}));
            expect.push_back(pair);
        }
        auto motions = generate_motions(model, ds, vae_cfg, vae_store, cond_sets, steps, root.u64());
        int rp = 0, rg = 0, rj = 0;
        for (size_t i = 0; i < motions.size(); ++i) {
            auto [p, g] = oracle_classify(motions[i]);
            bool pok = p == expect[i].first;
            bool gok = g == expect[i].second;
            rp += pok;
            rg += gok;
            rj += pok && gok;
        }
        out.n_recombined = static_cast<int>(motions.size());
        out.recomb_path_acc = static_cast<f64>(rp) / out.n_recombined;
        out.recomb_gesture_acc = static_cast<f64>(rg) / out.n_recombined;
        out.recomb_joint_acc = static_cast<f64>(rj) / out.n_recombined;
    }
    return out;
}

// ---------------------------------------------------------------------------
// full protocol
// ---------------------------------------------------------------------------

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["fid"] = fid;
    j["r_precision"] = {{"top1", r_precision_top1}, {"top2", r_precision_top2},
                        {"top3", r_precision_top3}};
    j["mm_dist"] = mm_dist;
    j["diversity"] = diversity;
    j["mmodality"] = mmodality;
    j["transition_distance"] = transition_distance;
    j["holistic_oracle_accuracy"] = holistic_oracle_accuracy;
    j["decomposition"] = {{"accuracy", decomposition_accuracy},
                          {"path_acc", decomposition_path_acc},
                          {"gesture_acc", decomposition_gesture_acc},
                          {"rest_fraction", decomposition_rest_fraction}};
    j["recombination"] = {{"accuracy", recombination_accuracy},
                          {"path_acc", recombination_path_acc},
                          {"gesture_acc", recombination_gesture_acc}};
    j["counts"] = {{"generated", n_generated},
                   {"real", n_real},
                   {"decomposed", n_decomposed},
                   {"recombined", n_recombined}};
    return j.dump(2);
}

std::string MetricReport::to_table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    auto row = [&](const std::string& name, f64 v) {
        os << std::left << std::setw(26) << name << std::right << std::setw(10) << v << '\n';
    };
    os << std::left << std::setw(26) << "metric" << std::right << std::setw(10) << "value" << '\n';
    os << std::string(36, '-') << '\n';
    row("fid", fid);
    row("r_precision_top1", r_precision_top1);
    row("r_precision_top2", r_precision_top2);
    row("r_precision_top3", r_precision_top3);
    row("mm_dist", mm_dist);
    row("diversity", diversity);
    row("mmodality", mmodality);
    row("transition_distance", transition_distance);
    row("holistic_oracle_acc", holistic_oracle_accuracy);
    row("decomposition_acc", decomposition_accuracy);
    row("decomposition_rest_frac", decomposition_rest_fraction);
    row("recombination_acc", recombination_accuracy);
    return os.str();
}

MetricReport full_evaluation(const DiffusionModel& model, const Dataset& ds,
                             const VaeConfig& vae_cfg, const ParameterStore& vae_store,
                             const ParameterStore& eval_store, const EvaluatorConfig& eval_cfg,
                             const TextEncoderConfig& text_cfg, const EvalProtocolConfig& cfg) {
    Rng root(cfg.seed);
    ConditionLibrary lib(eval_store, text_cfg);

    // holistic generations over test labels (cycled)
    int n_labels = static_cast<int>(ds.test_labels.size());
    if (n_labels == 0) fail("full_evaluation: empty test split");
    std::vector<std::vector<Array<f32>>> cond_sets;
    std::vector<std::pair<std::string, std::string>> gen_labels;
    for (int i = 0; i < cfg.n_gen; ++i) {
        const auto& lab = ds.test_labels[static_cast<size_t>(i % n_labels)];
        cond_sets.push_back(native_condition(model, lib, lab.path, lab.gesture));
        gen_labels.emplace_back(lab.path, lab.gesture);
    }
    auto generated =
        generate_motions(model, ds, vae_cfg, vae_store, cond_sets, cfg.sample_steps, root.u64());

    MetricReport rep;
    rep.n_generated = static_cast<int>(generated.size());
    rep.n_real = static_cast<int>(ds.test.size());

    int joint = 0;
    for (size_t i = 0; i < generated.size(); ++i) {
        auto [p, g] = oracle_classify(generated[i]);
        joint += p == gen_labels[i].first && g == gen_labels[i].second;
    }
    rep.holistic_oracle_accuracy = static_cast<f64>(joint) / rep.n_generated;

    Array<f32> real_feats = motion_features(eval_store, eval_cfg, ds, ds.test);
    Array<f32> gen_feats = motion_features(eval_store, eval_cfg, ds, generated);
    rep.fid = fid(real_feats, gen_feats);

    Array<f32> gen_text_feats = text_features(eval_store, eval_cfg, text_cfg, gen_labels);
    Rng rp_rng = root.fork(1);
    RPrecision rp = r_precision(gen_feats, gen_text_feats, cfg.pool_size, rp_rng);
    rep.r_precision_top1 = rp.top1;
    rep.r_precision_top2 = rp.top2;
    rep.r_precision_top3 = rp.top3;

    rep.mm_dist = mm_dist(gen_feats, gen_text_feats);

    Rng div_rng = root.fork(2);
    rep.diversity = diversity(gen_feats, cfg.diversity_pairs, div_rng);

    // repeated generations per text for the multimodality metric
    std::vector<Array<f32>> per_text;
    {
        Rng mm_rng = root.fork(3);
        for (int tix = 0; tix < cfg.mmodality_texts; ++tix) {
            const auto& lab =
                ds.test_labels[static_cast<size_t>((tix * 37) % n_labels)];
            std::vector<std::vector<Array<f32>>> reps(
                static_cast<size_t>(cfg.mmodality_repeats),
                native_condition(model, lib, lab.path, lab.gesture));
            auto motions = generate_motions(model, ds, vae_cfg, vae_store, reps,
                                            cfg.sample_steps, mm_rng.u64());
            per_text.push_back(motion_features(eval_store, eval_cfg, ds, motions));
        }
    }
    Rng mm2_rng = root.fork(4);
    rep.mmodality = mmodality(per_text, mm2_rng);

    rep.transition_distance = transition_distance(generated);

    DecompositionScores ds_scores =
        decomposition_scores(model, ds, vae_cfg, vae_store, lib,
                             std::max(cfg.decomposition_seeds, cfg.recombination_seeds),
                             cfg.sample_steps, root.fork(5).u64());
    rep.decomposition_accuracy = ds_scores.joint_acc;
    rep.decomposition_path_acc = ds_scores.path_acc;
    rep.decomposition_gesture_acc = ds_scores.gesture_acc;
    rep.decomposition_rest_fraction = ds_scores.rest_fraction;
    rep.recombination_accuracy = ds_scores.recomb_joint_acc;
    rep.recombination_path_acc = ds_scores.recomb_path_acc;
    rep.recombination_gesture_acc = ds_scores.recomb_gesture_acc;
    rep.n_decomposed = ds_scores.n_decomposed;
    rep.n_recombined = ds_scores.n_recombined;
    return rep;
}

} // namespace dmg
