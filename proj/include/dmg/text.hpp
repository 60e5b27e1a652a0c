#pragma once

#include <span>
#include <string>
#include <vector>

#include "dmg/nn.hpp"
#include "dmg/params.hpp"
#include "dmg/tensor.hpp"

namespace dmg {

// Fixed concept vocabulary, PAD = 0. Ids are stable across runs.
class Vocabulary {
public:
    static const Vocabulary& instance();
    int id(const std::string& token) const; // unknown token -> rejected
    const std::vector<std::string>& tokens() const { return tokens_; }
    int size() const { return static_cast<int>(tokens_.size()); }
    // Token row right-padded with PAD to length l_c.
    std::vector<int> encode_padded(std::span<const std::string> words, int l_c) const;

private:
    Vocabulary();
    std::vector<std::string> tokens_;
};

struct TextEncoderConfig {
    int l_c = 4;
    int d_c = 64;
    int heads = 4;
    int ff_mult = 4;
};

// Token embedding + learned positions + one pre-norm self-attention block.
// Parameters live under "text."; they are trained with the evaluator and
// frozen for diffusion training.
class TextEncoder {
public:
    static void init_params(ParameterStore& store, const TextEncoderConfig& cfg, Rng& rng);

    // ids: batch-major [batch * l_c]; returns [batch, l_c, d_c].
    template <typename T>
    static Var encode(Tape<T>& tp, ParamLoader<T>& P, const TextEncoderConfig& cfg,
                      std::span<const int> ids, int batch);

    // Convenience: run one frozen forward and detach the result.
    static Array<f32> encode_array(const ParameterStore& store, const TextEncoderConfig& cfg,
                                   std::span<const int> ids, int batch);
};

// ---------------------------------------------------------------------------
// embedding-partition machinery
// ---------------------------------------------------------------------------

// Columns [k*d_c/K, (k+1)*d_c/K) per branch; concat of the outputs
// reproduces the input bit-exactly. K must divide d_c.
std::vector<Array<f32>> partition_embedding(const Array<f32>& c, int k_branches);

// Tape-side partition of a [B, L_c, d_c] embedding batch.
template <typename T>
std::vector<Var> partition_var(Tape<T>& tp, Var c, int k_branches);

// Shared affine projector d_c/K -> d_c (parameters under "ossproj.").
struct OssProjector {
    static void init_params(ParameterStore& store, const TextEncoderConfig& cfg, int k_branches,
                            Rng& rng);
    template <typename T>
    static Var project(Tape<T>& tp, ParamLoader<T>& P, Var sub); // [B,Lc,dc/K] -> [B,Lc,dc]
};

// Shared up-projection plus a two-layer pre-norm transformer
// (parameters under "scproj.").
struct ScProjector {
    static void init_params(ParameterStore& store, const TextEncoderConfig& cfg, int k_branches,
                            Rng& rng);
    template <typename T>
    static Var project(Tape<T>& tp, ParamLoader<T>& P, const TextEncoderConfig& cfg, Var sub);
};

// Mean over unordered branch pairs of squared cosine similarity between
// flattened per-sample embeddings. Zero-norm embeddings contribute cosine 0
// and bump *warnings (degenerate early-training case).
template <typename T>
Var ortho_loss(Tape<T>& tp, std::span<const Var> branches, int* warnings = nullptr);

} // namespace dmg
