#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>

// Fast float transcendentals for the f32 hot path. Pure mul/add/floor plus
// an exponent-bit construction: deterministic on every build, identical in
// scalar and vector contexts. Relative error ~1e-7. The f64 paths keep libm.

namespace dmg::detail {

// Branch-free; the AVX2 gelu kernel mirrors this operation-for-operation,
// so the two variants stay bit-identical.
inline float fast_exp(float x) {
    x = std::min(std::max(x, -87.0f), 88.0f);
    float z = x * 1.44269504088896341f; // log2(e)
    float zi = std::floor(z);
    float f = z - zi;
    // 2^f on [0,1): degree-7 expansion of exp(f ln 2)
    float p = 1.52527338040598e-5f;
    p = p * f + 1.54035303933816e-4f;
    p = p * f + 0.00133335581464284f;
    p = p * f + 0.00961812910762848f;
    p = p * f + 0.0555041086648216f;
    p = p * f + 0.240226506959101f;
    p = p * f + 0.693147180559945f;
    p = p * f + 1.0f;
    uint32_t bits = static_cast<uint32_t>(static_cast<int32_t>(zi) + 127) << 23;
    float scale;
    std::memcpy(&scale, &bits, sizeof scale);
    return p * scale;
}

// exp underflow drives the ratio to exactly 1, so no saturation branch
inline float fast_tanh(float x) {
    float e = fast_exp(-2.0f * std::fabs(x));
    float t = (1.0f - e) / (1.0f + e);
    return std::copysign(t, x);
}

} // namespace dmg::detail
