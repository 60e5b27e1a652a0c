#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>

#include "dmg/common.hpp"

namespace dmg {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic RNG with explicit distributions. std::mt19937_64 is fully
// specified by the standard; the mappings below avoid the
// implementation-defined std <random> distributions so that identical seeds
// give identical streams on any build.
class Rng {
public:
    explicit Rng(uint64_t seed) : root_(seed), eng_(splitmix64(seed)) {}

    uint64_t u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive bounds, rejection-free modulo bias removal.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t x;
        do {
            x = u64();
        } while (x >= limit);
        return lo + static_cast<int64_t>(x % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = static_cast<double>((u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void fill_normal(std::span<T> out, double mean = 0.0, double stddev = 1.0) {
        for (auto& x : out) x = static_cast<T>(mean + stddev * normal());
    }

    template <typename T>
    void fill_uniform(std::span<T> out, double lo, double hi) {
        for (auto& x : out) x = static_cast<T>(uniform(lo, hi));
    }

    // Independent substream; `stream` labels it (sample index, stage id, ...).
    Rng fork(uint64_t stream) const { return Rng(splitmix64(root_ ^ splitmix64(stream + 0x633d5c1ull))); }

    uint64_t root_seed() const { return root_; }

private:
    uint64_t root_;
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Deterministic Fisher-Yates.
template <typename T>
void shuffle(std::span<T> xs, Rng& rng) {
    for (size_t i = xs.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
        std::swap(xs[i - 1], xs[j]);
    }
}

} // namespace dmg
