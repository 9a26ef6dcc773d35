#include "starmt/core/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace starmt {

int max_threads() {
    static const int cached = [] {
        if (const char* env = std::getenv("STARMT_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return hw >= 1 ? static_cast<int>(hw) : 1;
    }();
    return cached;
}

void parallel_for_chunks(long n, const std::function<void(long, long)>& fn) {
    if (n <= 0) return;
    const int workers = static_cast<int>(std::min<long>(max_threads(), n));
    if (workers <= 1 || n < 2) {
        fn(0, n);
        return;
    }
    const long chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers - 1));
    for (int w = 1; w < workers; ++w) {
        const long lo = w * chunk;
        const long hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    fn(0, std::min(n, chunk));
    for (auto& t : pool) t.join();
}

void parallel_for(long n, const std::function<void(long)>& fn) {
    parallel_for_chunks(n, [&fn](long lo, long hi) {
        for (long i = lo; i < hi; ++i) fn(i);
    });
}

} // namespace starmt
