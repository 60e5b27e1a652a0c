#pragma once

#include <map>
#include <string>
#include <vector>

#include "dmg/rng.hpp"
#include "dmg/tensor.hpp"

namespace dmg {

struct AdamwConfig {
    f32 lr = 1e-3f;
    f32 beta1 = 0.9f;
    f32 beta2 = 0.999f;
    f32 eps = 1e-8f;
    f32 weight_decay = 0.0f;
};

// Named parameters plus AdamW state. Checkpoints use the "DMGC" container:
// magic, u32 version, then per tensor [u32 name_len, name, u32 rank,
// u32 extents..., little-endian f32 payload], records sorted by name.
// Round-trips are bit-exact. Optimizer state is not serialized.
class ParameterStore {
public:
    Array<f32>& create(const std::string& name, Array<f32> init);
    Array<f32>& create_normal(const std::string& name, const Shape& shape, Rng& rng, f64 stddev);
    Array<f32>& create_zeros(const std::string& name, const Shape& shape);
    Array<f32>& create_const(const std::string& name, const Shape& shape, f32 value);

    bool has(const std::string& name) const { return params_.count(name) > 0; }
    Array<f32>& at(const std::string& name);
    const Array<f32>& at(const std::string& name) const;
    std::vector<std::string> names() const;
    size_t count() const { return params_.size(); }
    int64_t step() const { return step_; }

    // One decoupled-weight-decay update. Gradient keys must match the
    // parameter keys exactly; any mismatch is rejected.
    void adamw_step(const std::map<std::string, Array<f32>>& grads, const AdamwConfig& cfg);

    void save(const std::string& path) const;
    void load(const std::string& path);
    std::vector<unsigned char> serialize() const;
    uint64_t fingerprint() const;

private:
    std::map<std::string, Array<f32>> params_;
    std::map<std::string, Array<f32>> m_, v_;
    int64_t step_ = 0;
};

// Leaf-per-parameter view of a store on a tape. Each parameter is loaded at
// most once per tape; gradients are read back by name after backward().
template <typename T>
class ParamLoader {
public:
    // Names starting with a frozen prefix always load without gradients
    // (calibration constants and similar non-trainable state).
    ParamLoader(Tape<T>& tape, const ParameterStore& store, bool trainable,
                std::vector<std::string> frozen_prefixes = {})
        : tape_(&tape), store_(&store), trainable_(trainable),
          frozen_(std::move(frozen_prefixes)) {}

    // View over externally created leaves (the finite-difference harness
    // feeds perturbed parameter leaves through the production forwards).
    ParamLoader(Tape<T>& tape, std::map<std::string, Var> leaves)
        : tape_(&tape), store_(nullptr), trainable_(false), vars_(std::move(leaves)) {}

    Var operator()(const std::string& name) {
        auto it = vars_.find(name);
        if (it != vars_.end()) return it->second;
        if (!store_) fail("param loader: no leaf bound for '", name, "'");
        bool frozen = false;
        for (const auto& p : frozen_)
            if (name.rfind(p, 0) == 0) frozen = true;
        Array<T> arr = store_->at(name).template cast<T>();
        Var v = tape_->leaf(arr, trainable_ && !frozen);
        vars_.emplace(name, v);
        return v;
    }

    std::map<std::string, Array<f32>> grads() const {
        std::map<std::string, Array<f32>> out;
        for (const auto& [name, v] : vars_) {
            Array<T> g = tape_->grad_array(v);
            out.emplace(name, g.template cast<f32>());
        }
        return out;
    }

    const std::map<std::string, Var>& vars() const { return vars_; }

private:
    Tape<T>* tape_;
    const ParameterStore* store_;
    bool trainable_;
    std::vector<std::string> frozen_;
    std::map<std::string, Var> vars_;
};

} // namespace dmg
