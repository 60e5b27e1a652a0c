#pragma once

#include <string>
#include <vector>

#include "dmg/data.hpp"
#include "dmg/nn.hpp"
#include "dmg/params.hpp"

namespace dmg {

// Temporal convolutional VAE: two x2 downsamplings map [L, d_m] motions to
// [L/4, d_z] latents. z = mu + sigma*eps during training, z = mu when
// producing diffusion targets.
struct VaeConfig {
    int width = 64;
    int d_z = 16;
    f32 kl_weight = 1e-3f;
    int epochs = 40;
    int batch = 64;
    f32 lr = 1e-3f;
    uint64_t seed = 0;

    int l_z() const { return kFrames / 4; }
};

void init_vae(ParameterStore& store, const VaeConfig& cfg, Rng& rng);

// x: [B, L, d_m] normalized motions -> (mu, logvar), each [B, L/4, d_z].
template <typename T>
std::pair<Var, Var> vae_encode(Tape<T>& tp, ParamLoader<T>& P, const VaeConfig& cfg, Var x);

// z: [B, L/4, d_z] -> [B, L, d_m] (normalized space).
template <typename T>
Var vae_decode(Tape<T>& tp, ParamLoader<T>& P, const VaeConfig& cfg, Var z);

// KL(N(mu, sigma) || N(0, I)), mean over elements:
// -0.5 * mean(1 + logvar - mu^2 - exp(logvar)).
template <typename T>
Var vae_kl(Tape<T>& tp, Var mu, Var logvar);

// Detached helpers (no-grad forward on a scratch tape).
Array<f32> vae_encode_mu(const ParameterStore& store, const VaeConfig& cfg,
                         const Array<f32>& x_batch);
Array<f32> vae_decode_batch(const ParameterStore& store, const VaeConfig& cfg,
                            const Array<f32>& z_batch);

struct VaeEpochLog {
    int epoch;
    f64 recon;
    f64 kl;
};

struct VaeTrainResult {
    ParameterStore store;
    std::vector<VaeEpochLog> log;
    bool aborted = false; // NaN divergence; store holds the last good epoch
};

// Trains on the normalized train split; per-epoch losses are appended to
// log_path as JSON-lines when non-empty.
VaeTrainResult train_vae(const Dataset& ds, const VaeConfig& cfg,
                         const std::string& log_path = {});

// Checkpoint plus a <path>.json sidecar carrying the architecture fields.
void save_vae(const ParameterStore& store, const VaeConfig& cfg, const std::string& path);
std::pair<ParameterStore, VaeConfig> load_vae(const std::string& path);

} // namespace dmg
