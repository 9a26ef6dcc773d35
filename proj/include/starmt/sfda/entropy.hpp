#pragma once

#include "starmt/core/tensor.hpp"

#include <vector>

namespace starmt::sfda {

// Mean self-entropy of a score set: H = -(1/(N*n_c)) sum_i sum_c s*ln(s),
// with 0*ln(0) := 0. Bounded by [0, 1/e]; 0 iff every score is 0 or 1.
real mean_self_entropy(const Tensor& scores);

struct EntropyTrace {
    std::vector<std::pair<long, real>> points; // (iteration, H), iterations strictly increasing
    int window = 100;

    void push(long iteration, real h);
};

// Trailing window mean (partial windows at the start).
std::vector<real> smoothed_entropy(const EntropyTrace& trace);

enum class SelectionRule { FirstLocalMin, GlobalMin };

// Checkpoint selection over the smoothed curve. FirstLocalMin (the default)
// returns the first point strictly lower than every point of its window-wide
// neighborhoods on both sides; with no interior minimum it falls back to the
// global minimum. GlobalMin returns the smoothed argmin directly. Traces
// shorter than the window use the raw global minimum. Returns the iteration.
long select_checkpoint(const EntropyTrace& trace,
                       SelectionRule rule = SelectionRule::FirstLocalMin);

} // namespace starmt::sfda
