#include "starmt/sfda/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace starmt::sfda {

real mean_self_entropy(const Tensor& scores) {
    const long n = scores.numel();
    if (n == 0) throw std::invalid_argument("mean_self_entropy: needs at least one score");
    real acc = 0.0;
    for (long i = 0; i < n; ++i) {
        const real s = scores[i];
        if (s > 0.0) acc -= s * std::log(s); // 0*ln(0) := 0
    }
    return acc / static_cast<real>(n);
}

void EntropyTrace::push(long iteration, real h) {
    if (!points.empty() && iteration <= points.back().first)
        throw std::invalid_argument("EntropyTrace: iterations must be strictly increasing");
    points.emplace_back(iteration, h);
}

std::vector<real> smoothed_entropy(const EntropyTrace& trace) {
    const size_t n = trace.points.size();
    std::vector<real> out(n);
    real running = 0.0;
    const size_t w = static_cast<size_t>(std::max(1, trace.window));
    for (size_t i = 0; i < n; ++i) {
        running += trace.points[i].second;
        if (i >= w) running -= trace.points[i - w].second;
        const size_t count = std::min(i + 1, w);
        out[i] = running / static_cast<real>(count);
    }
    return out;
}

long select_checkpoint(const EntropyTrace& trace, SelectionRule rule) {
    const size_t n = trace.points.size();
    if (n == 0) throw std::invalid_argument("select_checkpoint: empty trace");
    const size_t w = static_cast<size_t>(std::max(1, trace.window));

    auto argmin = [](const std::vector<real>& v) {
        size_t best = 0;
        for (size_t i = 1; i < v.size(); ++i)
            if (v[i] < v[best]) best = i;
        return best;
    };

    if (n < w) {
        std::vector<real> raw(n);
        for (size_t i = 0; i < n; ++i) raw[i] = trace.points[i].second;
        return trace.points[argmin(raw)].first;
    }

    const std::vector<real> s = smoothed_entropy(trace);
    if (rule == SelectionRule::FirstLocalMin) {
        for (size_t i = w; i + w < n; ++i) {
            bool is_min = true;
            for (size_t j = i - w; j <= i + w && is_min; ++j) {
                if (j == i) continue;
                if (s[j] <= s[i]) is_min = false;
            }
            if (is_min) return trace.points[i].first;
        }
    }
    return trace.points[argmin(s)].first;
}

} // namespace starmt::sfda
