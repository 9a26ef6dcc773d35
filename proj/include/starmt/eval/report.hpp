#pragma once

#include "starmt/eval/evaluate.hpp"
#include "starmt/sfda/entropy.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace starmt::eval {

struct ReportInputs {
    std::vector<MetricsRecord> records;
    const sfda::EntropyTrace* trace = nullptr; // optional adaptation trace
    std::map<long, real> snapshot_ap50;        // optional AP per snapshot iteration
    long selected_iteration = -1;
};

// Emits a method x dataset AP50 table (CSV + aligned text) and, when a trace
// is present, a curve CSV (one row per entropy window) plus a rendered PNG
// with the selected checkpoint marked.
void report(const ReportInputs& in, const std::string& out_dir);

} // namespace starmt::eval
