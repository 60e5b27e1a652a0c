#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dmg/tensor.hpp"

namespace dmg {

struct GradCheckResult {
    f64 max_rel_err = 0.0;
    std::string worst_input;
    int64_t worst_coord = -1;
};

// Central finite differences against reverse-mode gradients, f64.
// `build` must be pure: called repeatedly with fresh tapes, it must create
// the identical graph each time. Error metric per coordinate:
// |g_ad - g_fd| / max(1, |g_fd|).
inline GradCheckResult grad_check_many(
    const std::function<Var(Tape<f64>&, std::span<const Var>)>& build,
    std::span<const std::pair<std::string, Array<f64>>> points, f64 eps = 1e-5) {
    // analytic pass
    std::vector<Array<f64>> grads;
    {
        Tape<f64> tape;
        std::vector<Var> leaves;
        leaves.reserve(points.size());
        for (const auto& [name, p] : points) leaves.push_back(tape.leaf(p, true));
        Var loss = build(tape, leaves);
        tape.backward(loss);
        for (Var v : leaves) grads.push_back(tape.grad_array(v));
    }
    auto eval = [&](std::span<const Array<f64>> pts) {
        Tape<f64> tape;
        std::vector<Var> leaves;
        leaves.reserve(pts.size());
        for (const auto& p : pts) leaves.push_back(tape.leaf(p, false));
        return tape.scalar(build(tape, leaves));
    };
    std::vector<Array<f64>> work;
    for (const auto& [name, p] : points) work.push_back(p);

    GradCheckResult res;
    for (size_t i = 0; i < points.size(); ++i) {
        for (int64_t c = 0; c < work[i].size(); ++c) {
            f64 orig = work[i].data[static_cast<size_t>(c)];
            work[i].data[static_cast<size_t>(c)] = orig + eps;
            f64 lo_hi = eval(work);
            work[i].data[static_cast<size_t>(c)] = orig - eps;
            f64 lo_lo = eval(work);
            work[i].data[static_cast<size_t>(c)] = orig;
            f64 g_fd = (lo_hi - lo_lo) / (2.0 * eps);
            f64 g_ad = grads[i].data[static_cast<size_t>(c)];
            f64 rel = std::abs(g_ad - g_fd) / std::max(1.0, std::abs(g_fd));
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_input = points[i].first;
                res.worst_coord = c;
            }
        }
    }
    return res;
}

// Single-input form: f maps one tensor to a scalar loss.
inline f64 grad_check(const std::function<Var(Tape<f64>&, Var)>& f, const Array<f64>& point,
                      f64 eps = 1e-5) {
    std::pair<std::string, Array<f64>> p{"x", point};
    auto res = grad_check_many(
        [&](Tape<f64>& t, std::span<const Var> xs) { return f(t, xs[0]); },
        std::span<const std::pair<std::string, Array<f64>>>(&p, 1), eps);
    return res.max_rel_err;
}

} // namespace dmg
