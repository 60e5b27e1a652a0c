#pragma once

#include <cstdint>
#include <functional>

namespace dmg {

// Number of worker threads (DMG_THREADS env, default hardware_concurrency).
int thread_count();

// Static partition of [0, n) into contiguous chunks, one per worker.
// Workers write disjoint outputs, so results are bit-identical for any
// thread count. fn(begin, end) runs on the pool (and the calling thread).
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

} // namespace dmg
