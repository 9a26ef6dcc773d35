#pragma once

#include <functional>

namespace starmt {

// Worker cap: STARMT_THREADS env var if set, else hardware concurrency.
int max_threads();

// Static contiguous split of [0, n) across workers. Each index is handled by
// exactly one worker with a fixed serial inner order, so results are
// bit-identical for any thread count as long as fn(i) writes i-disjoint data.
void parallel_for(long n, const std::function<void(long)>& fn);

// Chunked variant: fn(begin, end) per contiguous chunk.
void parallel_for_chunks(long n, const std::function<void(long, long)>& fn);

} // namespace starmt
