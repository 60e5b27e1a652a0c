#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmg/data.hpp"
#include "dmg/nn.hpp"
#include "dmg/params.hpp"
#include "dmg/text.hpp"
#include "dmg/vae.hpp"

namespace dmg {

// ---------------------------------------------------------------------------
// noise schedule
// ---------------------------------------------------------------------------

// Tables indexed by t-1 for t = 1..T (f64 throughout):
//   alpha_t = 1 - beta_t, alpha_bar_t = prod alpha_i,
//   beta_tilde_t = beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)
//     (beta_tilde_1 defined as beta_1),
//   eta_t = (1 - alpha_t) / sqrt(1 - alpha_bar_t).
struct NoiseSchedule {
    int steps = 0;
    std::vector<f64> beta, alpha, alpha_bar, beta_tilde, eta;
};

NoiseSchedule make_schedule(int t_steps, f64 beta_1, f64 beta_t);
NoiseSchedule schedule_from_betas(std::vector<f64> betas);

// Stride-uniform subsequence of {1..T} with the derived compact tables.
// model_t[i] is the original timestep fed to the denoiser at reverse step
// i (ascending order; the sampler walks it backwards). steps == T
// reproduces the full schedule.
struct RespacedSchedule {
    NoiseSchedule sched;
    std::vector<int> model_t;
};
RespacedSchedule respace(const NoiseSchedule& full, int steps);

// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps
Array<f32> q_sample(const Array<f32>& z0, int t, const Array<f32>& eps,
                    const NoiseSchedule& sched);

// ---------------------------------------------------------------------------
// denoiser
// ---------------------------------------------------------------------------

struct DenoiserConfig {
    int blocks = 5;
    int width = 256;
    int heads = 4;
    int temb_dim = 256;
    int l_z = 16;
    int d_z = 16;
    int l_c = 4;
    int d_c = 64;
};

void init_denoiser(ParameterStore& store, const DenoiserConfig& cfg, Rng& rng);

// One forward pass: per-position input projection, sinusoidal timestep
// embedding through a 2-layer MLP added to every position, then per block
// {self-attention, cross-attention over the condition set, feed-forward}
// (pre-norm, GELU). With a single condition this is the plain conditional
// denoiser; with several, every cross-attention runs one branch per
// condition with shared weights and aggregates the branch outputs.
template <typename T>
Var denoiser_forward(Tape<T>& tp, ParamLoader<T>& P, const DenoiserConfig& cfg, Var z_t,
                     std::span<const Var> conds, std::span<const int64_t> ts,
                     Aggregation agg = Aggregation::Mean);

template <typename T>
Var denoise_eps(Tape<T>& tp, ParamLoader<T>& P, const DenoiserConfig& cfg, Var z_t, Var cond,
                std::span<const int64_t> ts);

// ---------------------------------------------------------------------------
// variants & composition
// ---------------------------------------------------------------------------

enum class Variant { Exp, Oss, Sc };
enum class Mode { Latent, Semantic };

const char* variant_name(Variant v);
const char* mode_name(Mode m);
Variant variant_from_name(const std::string& s);
Mode mode_from_name(const std::string& s);

struct VariantConfig {
    Variant variant = Variant::Exp;
    Mode mode = Mode::Latent;
    int k = 2;
    f32 tau = 0.7f;      // fraction of samples trained on the duplicated holistic text
    f32 alpha_o = 2.0f;  // 2.0 latent / 1.0 semantic by default
    f32 alpha_sc = 1.0f;
    Aggregation agg = Aggregation::Mean;
};

f32 default_alpha_o(Mode mode);

// Latent mode: aggregate of K independent full forwards, one per condition.
// Semantic mode: a single forward whose cross-attentions branch over the set.
template <typename T>
Var compose_eps(Tape<T>& tp, ParamLoader<T>& P, const DenoiserConfig& cfg, Var z_t,
                std::span<const Var> conds, std::span<const int64_t> ts, Mode mode,
                Aggregation agg);

// ---------------------------------------------------------------------------
// frozen text-embedding library
// ---------------------------------------------------------------------------

class ConditionLibrary {
public:
    ConditionLibrary(const ParameterStore& text_store, const TextEncoderConfig& cfg);
    const Array<f32>& concept_emb(const std::string& name) const;   // [L_c, d_c]
    const Array<f32>& holistic(const std::string& path, const std::string& gesture) const;
    const TextEncoderConfig& config() const { return cfg_; }

private:
    TextEncoderConfig cfg_;
    std::map<std::string, Array<f32>> by_key_;
};

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct DiffusionTrainConfig {
    VariantConfig variant;
    DenoiserConfig den; // latent/text extents overridden from the vae/text configs
    int steps = 2000;
    int batch = 32;
    f32 lr = 2e-4f;
    f32 lr_final = 2e-5f;
    int lr_decay_after = 50000;
    int t_steps = 1000;
    f64 beta_1 = 1e-4;
    f64 beta_t = 0.02;
    uint64_t seed = 0;
    int log_every = 25;
};

struct StepLoss {
    f32 total = 0, mse = 0, ortho = 0, sc = 0;
};

struct DiffusionModel {
    DenoiserConfig den;
    TextEncoderConfig text;
    VariantConfig variant;
    int t_steps = 1000;
    f64 beta_1 = 1e-4, beta_t = 0.02;
    ParameterStore params; // den.* plus the variant projector, if any

    NoiseSchedule schedule() const { return make_schedule(t_steps, beta_1, beta_t); }
};

// Precomputed frozen inputs for the training loop.
struct DiffusionTrainData {
    std::vector<Array<f32>> latents; // per train sample, [L_z, d_z] (posterior mean)
    std::vector<std::pair<std::string, std::string>> labels;
};
DiffusionTrainData prepare_train_data(const Dataset& ds, const VaeConfig& vae_cfg,
                                      const ParameterStore& vae_store,
                                      const DenoiserConfig& den_cfg);

// One optimizer step; exposed for loss-composition tests.
StepLoss diffusion_train_step(DiffusionModel& model, const DiffusionTrainData& data,
                              const ConditionLibrary& lib, const NoiseSchedule& sched,
                              const DiffusionTrainConfig& cfg, Rng& rng);

DiffusionModel train_diffusion(const Dataset& ds, const VaeConfig& vae_cfg,
                               const ParameterStore& vae_store, const TextEncoderConfig& text_cfg,
                               const ParameterStore& text_store, const DiffusionTrainConfig& cfg,
                               const std::string& log_path = {});

// Sidecar-aware persistence: <path> holds the checkpoint, <path>.json the
// variant/schedule metadata needed to sample from it.
void save_diffusion(const DiffusionModel& model, const std::string& path);
DiffusionModel load_diffusion(const std::string& path);

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

// Native holistic conditioning for the model's variant: Exp uses the two
// decomposed concept embeddings; OSS/SC partition the holistic embedding
// and run their projector.
std::vector<Array<f32>> native_condition(const DiffusionModel& model, const ConditionLibrary& lib,
                                         const std::string& path, const std::string& gesture);

// Explicit concept texts: one text is duplicated K times, otherwise one
// embedding per text.
std::vector<Array<f32>> texts_condition(const DiffusionModel& model, const ConditionLibrary& lib,
                                        const std::vector<std::string>& texts);

// n reverse chains over a respaced schedule; chain i draws every noise from
// rngs[i], so results do not depend on batch composition. cond_branches[k]
// holds chain i's k-th condition at row i ([n, L_c, d_c]). No noise is added
// on the final step. Returns n latents [L_z, d_z].
std::vector<Array<f32>> reverse_chains(const DiffusionModel& model,
                                       std::span<const Array<f32>> cond_branches,
                                       std::span<Rng> rngs, int steps);

// Alg-2-style generation: chains conditioned on full condition sets, decoded
// and de-normalized to motion space.
std::vector<Array<f32>> generate_motions(const DiffusionModel& model, const Dataset& ds,
                                         const VaeConfig& vae_cfg, const ParameterStore& vae_store,
                                         std::span<const std::vector<Array<f32>>> cond_sets,
                                         int steps, uint64_t seed);

// Alg-3-style decomposition: K independent chains, chain k conditioned only
// on conds[k], each decoded separately. seeds[k] drives chain k.
std::vector<Array<f32>> generate_decomposed(const DiffusionModel& model, const Dataset& ds,
                                            const VaeConfig& vae_cfg,
                                            const ParameterStore& vae_store,
                                            std::span<const Array<f32>> conds,
                                            std::span<const uint64_t> seeds, int steps);

} // namespace dmg
