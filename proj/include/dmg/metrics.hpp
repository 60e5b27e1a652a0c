#pragma once

#include <map>
#include <string>
#include <vector>

#include "dmg/data.hpp"
#include "dmg/diffusion.hpp"
#include "dmg/params.hpp"
#include "dmg/text.hpp"

namespace dmg {

// ---------------------------------------------------------------------------
// contrastive evaluator (motion and text towers into one feature space)
// ---------------------------------------------------------------------------

struct EvaluatorConfig {
    int feat_dim = 32;
    int width = 32;
    int epochs = 25;
    int batch = 64;
    f32 lr = 1e-3f;
    f32 temperature = 0.1f;
    uint64_t seed = 0;
};

// Creates eval.* parameters; the text.* tower is initialized separately and
// trained jointly here (then frozen for diffusion training).
void init_evaluator(ParameterStore& store, const EvaluatorConfig& cfg,
                    const TextEncoderConfig& text_cfg, Rng& rng);

template <typename T>
Var evaluator_motion_feat(Tape<T>& tp, ParamLoader<T>& P, const EvaluatorConfig& cfg,
                          Var x /* [B, L, d_m] normalized */);

template <typename T>
Var evaluator_text_feat(Tape<T>& tp, ParamLoader<T>& P, const EvaluatorConfig& cfg,
                        const TextEncoderConfig& text_cfg, std::span<const int> ids, int batch);

struct EvalEpochLog {
    int epoch;
    f64 loss;
};

struct EvaluatorTrainResult {
    ParameterStore store; // text.* + eval.*
    std::vector<EvalEpochLog> log;
    bool aborted = false;
};

EvaluatorTrainResult train_evaluator(const Dataset& ds, const EvaluatorConfig& cfg,
                                     const TextEncoderConfig& text_cfg,
                                     const std::string& log_path = {});

// Checkpoint plus <path>.json sidecar (evaluator + text-encoder layout).
void save_evaluator(const ParameterStore& store, const EvaluatorConfig& cfg,
                    const TextEncoderConfig& text_cfg, const std::string& path);
struct LoadedEvaluator {
    ParameterStore store;
    EvaluatorConfig cfg;
    TextEncoderConfig text_cfg;
};
LoadedEvaluator load_evaluator(const std::string& path);

// Detached feature extraction. Motions are raw (de-normalized) and get
// normalized with the dataset statistics first.
Array<f32> motion_features(const ParameterStore& store, const EvaluatorConfig& cfg,
                           const Dataset& ds, std::span<const Array<f32>> motions);
Array<f32> text_features(const ParameterStore& store, const EvaluatorConfig& cfg,
                         const TextEncoderConfig& text_cfg,
                         std::span<const std::pair<std::string, std::string>> labels);

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

// ||mu_g - mu_r||^2 + Tr(S_g + S_r - 2 (S_g S_r)^{1/2}); the matrix root
// comes from a Jacobi eigendecomposition of the symmetrized product,
// eigenvalues in [-1e-6, 0) clamped to zero, below that rejected.
f64 fid(const Array<f32>& real_feats, const Array<f32>& gen_feats);

struct RPrecision {
    f64 top1 = 0, top2 = 0, top3 = 0;
    int pool_size = 32;
    int n = 0;
};

// For each motion, rank its own text against pool_size-1 mismatched texts
// drawn (seeded, distinct indices) from the other samples, by Euclidean
// feature distance. With only 16 holistic classes a mismatch can carry the
// same class and therefore an identical feature; such exact ties resolve
// for the ground truth (retrieving an identical caption is a hit).
RPrecision r_precision(const Array<f32>& motion_feats, const Array<f32>& text_feats,
                       int pool_size, Rng& rng);

f64 mm_dist(const Array<f32>& motion_feats, const Array<f32>& text_feats);

// Mean distance over n_pairs disjoint feature pairs (needs >= 2*n_pairs rows).
f64 diversity(const Array<f32>& feats, int n_pairs, Rng& rng);

// Per text: features of repeated generations are split into two random
// subsets; the metric is the mean distance between paired halves,
// averaged over texts. Needs >= 10 repeats per text.
f64 mmodality(std::span<const Array<f32>> per_text_feats, Rng& rng);

// Mean Euclidean distance between consecutive frames, raw motion space.
f64 transition_distance(std::span<const Array<f32>> motions);

// ---------------------------------------------------------------------------
// decomposition / recombination scoring (oracle-based)
// ---------------------------------------------------------------------------

struct DecompositionScores {
    f64 path_acc = 0, gesture_acc = 0, joint_acc = 0;
    f64 rest_fraction = 0; // decomposed PATH chains with rest-level limbs
    int n_decomposed = 0;
    f64 recomb_path_acc = 0, recomb_gesture_acc = 0, recomb_joint_acc = 0;
    int n_recombined = 0;
};

DecompositionScores decomposition_scores(const DiffusionModel& model, const Dataset& ds,
                                         const VaeConfig& vae_cfg, const ParameterStore& vae_store,
                                         const ConditionLibrary& lib, int n_seeds, int steps,
                                         uint64_t seed);

// ---------------------------------------------------------------------------
// full evaluation protocol
// ---------------------------------------------------------------------------

struct EvalProtocolConfig {
    int n_gen = 608;        // holistic generations over test labels
    int pool_size = 32;     // r-precision pool
    int diversity_pairs = 300;
    int mmodality_texts = 8;
    int mmodality_repeats = 10;
    int decomposition_seeds = 50;
    int recombination_seeds = 50;
    int sample_steps = 50;
    uint64_t seed = 0;
};

struct MetricReport {
    f64 fid = 0;
    f64 r_precision_top1 = 0, r_precision_top2 = 0, r_precision_top3 = 0;
    f64 mm_dist = 0;
    f64 diversity = 0;
    f64 mmodality = 0;
    f64 transition_distance = 0;
    f64 decomposition_accuracy = 0; // joint over both chains
    f64 decomposition_path_acc = 0, decomposition_gesture_acc = 0;
    f64 decomposition_rest_fraction = 0;
    f64 recombination_accuracy = 0; // joint over held-out pairs
    f64 recombination_path_acc = 0, recombination_gesture_acc = 0;
    f64 holistic_oracle_accuracy = 0; // joint label accuracy of the generations
    int n_generated = 0, n_real = 0, n_decomposed = 0, n_recombined = 0;

    std::string to_json() const; // stable key order, byte-reproducible
    std::string to_table() const;
};

MetricReport full_evaluation(const DiffusionModel& model, const Dataset& ds,
                             const VaeConfig& vae_cfg, const ParameterStore& vae_store,
                             const ParameterStore& eval_store, const EvaluatorConfig& eval_cfg,
                             const TextEncoderConfig& text_cfg, const EvalProtocolConfig& cfg);

} // namespace dmg
