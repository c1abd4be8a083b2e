#pragma once

#include <cstdint>
#include <functional>

namespace cost {

/// Worker cap: COST_THREADS env var if set, else hardware concurrency.
int worker_count();

/// Runs fn(begin, end) over a static partition of [0, n) into contiguous
/// chunks, one per worker. Workers write to disjoint outputs only, so results
/// are identical for any thread count; reductions stay with the caller.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace cost
