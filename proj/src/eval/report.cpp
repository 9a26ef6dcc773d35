#include "starmt/eval/report.hpp"

#include "starmt/eval/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

namespace fs = std::filesystem;

namespace starmt::eval {

namespace {

std::string fmt(real v, int prec = 4) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

void write_tables(const std::vector<MetricsRecord>& records, const std::string& out_dir) {
    // Preserve first-seen order of methods and datasets.
    std::vector<std::string> methods, datasets;
    std::map<std::pair<std::string, std::string>, real> cells;
    for (const auto& r : records) {
        if (std::find(methods.begin(), methods.end(), r.model_id) == methods.end())
            methods.push_back(r.model_id);
        if (std::find(datasets.begin(), datasets.end(), r.dataset_id) == datasets.end())
            datasets.push_back(r.dataset_id);
        cells[{r.model_id, r.dataset_id}] = r.mean_ap50;
    }

    std::ofstream csv(fs::path(out_dir) / "ap50_table.csv");
    csv << "method";
    for (const auto& d : datasets) csv << "," << d;
    csv << "\n";
    for (const auto& m : methods) {
        csv << m;
        for (const auto& d : datasets) {
            csv << ",";
            auto it = cells.find({m, d});
            if (it != cells.end()) csv << fmt(it->second);
        }
        csv << "\n";
    }

    size_t name_w = 6;
    for (const auto& m : methods) name_w = std::max(name_w, m.size());
    std::ofstream txt(fs::path(out_dir) / "ap50_table.txt");
    txt << std::string(name_w, ' ');
    for (const auto& d : datasets) txt << "  " << d;
    txt << "\n";
    for (const auto& m : methods) {
        txt << m << std::string(name_w - m.size(), ' ');
        for (const auto& d : datasets) {
            auto it = cells.find({m, d});
            const std::string v = it != cells.end() ? fmt(it->second) : "-";
            txt << "  " << std::string(d.size() > v.size() ? d.size() - v.size() : 0, ' ') << v;
        }
        txt << "\n";
    }
}

void write_curve(const ReportInputs& in, const std::string& out_dir) {
    const sfda::EntropyTrace& trace = *in.trace;
    const std::vector<real> smoothed = sfda::smoothed_entropy(trace);
    const size_t w = static_cast<size_t>(std::max(1, trace.window));

    std::ofstream csv(fs::path(out_dir) / "curve.csv");
    csv << "iteration,H_raw,H_smoothed,ap50\n";
    std::vector<std::pair<long, real>> curve_pts;
    for (size_t i = w - 1; i < trace.points.size(); i += w) {
        const long iter = trace.points[i].first;
        csv << iter << "," << fmt(trace.points[i].second, 6) << "," << fmt(smoothed[i], 6) << ",";
        auto it = in.snapshot_ap50.find(iter);
        if (it != in.snapshot_ap50.end()) csv << fmt(it->second);
        csv << "\n";
        curve_pts.emplace_back(iter, smoothed[i]);
    }

    // Rendered curves: smoothed entropy (blue, left scale), AP50 (orange,
    // 0..1 right scale), selected checkpoint marked with a red plus.
    const int W = 720, H = 400;
    const int ml = 60, mr = 20, mt = 30, mb = 45;
    Canvas cv(W, H);
    const Canvas::Color axis{0.2, 0.2, 0.2};
    const Canvas::Color blue{0.1, 0.3, 0.85};
    const Canvas::Color orange{0.9, 0.5, 0.1};
    const Canvas::Color red{0.85, 0.1, 0.1};

    cv.line(ml, H - mb, W - mr, H - mb, axis);
    cv.line(ml, mt, ml, H - mb, axis);

    const long it_min = trace.points.front().first;
    const long it_max = trace.points.back().first;
    real h_min = smoothed[0], h_max = smoothed[0];
    for (real v : smoothed) {
        h_min = std::min(h_min, v);
        h_max = std::max(h_max, v);
    }
    if (h_max - h_min < 1e-9) h_max = h_min + 1e-9;

    auto sx = [&](real iter) {
        return ml + (iter - static_cast<real>(it_min)) /
                        std::max<real>(1, static_cast<real>(it_max - it_min)) * (W - ml - mr);
    };
    auto sy_h = [&](real v) { return (H - mb) - (v - h_min) / (h_max - h_min) * (H - mt - mb); };
    auto sy_ap = [&](real v) { return (H - mb) - v * (H - mt - mb); };

    std::vector<std::pair<real, real>> hpts;
    for (size_t i = 0; i < trace.points.size(); ++i)
        hpts.emplace_back(sx(static_cast<real>(trace.points[i].first)), sy_h(smoothed[i]));
    cv.polyline(hpts, blue);

    if (!in.snapshot_ap50.empty()) {
        std::vector<std::pair<real, real>> appts;
        for (const auto& [iter, ap] : in.snapshot_ap50)
            appts.emplace_back(sx(static_cast<real>(iter)), sy_ap(ap));
        cv.polyline(appts, orange);
        for (const auto& p : appts) cv.marker_plus(p.first, p.second, 2, orange);
    }

    if (in.selected_iteration >= 0) {
        size_t sel = 0;
        for (size_t i = 0; i < trace.points.size(); ++i)
            if (trace.points[i].first == in.selected_iteration) sel = i;
        cv.marker_plus(sx(static_cast<real>(trace.points[sel].first)), sy_h(smoothed[sel]), 6, red);
    }

    cv.text(ml, 8, "H SMOOTHED (BLUE)  AP50 0-1 (ORANGE)  SELECTED (+)", axis);
    cv.text(ml - 52, mt - 4, fmt(h_max, 3), axis);
    cv.text(ml - 52, H - mb - 4, fmt(h_min, 3), axis);
    cv.text(ml, H - mb + 8, std::to_string(it_min), axis);
    const std::string xmax = std::to_string(it_max);
    cv.text(W - mr - static_cast<int>(xmax.size()) * 6, H - mb + 8, xmax, axis);
    cv.text(W / 2 - 12, H - mb + 22, "ITER", axis);
    cv.save_png((fs::path(out_dir) / "curve.png").string());
}

} // namespace

void report(const ReportInputs& in, const std::string& out_dir) {
    if (in.records.empty()) throw std::invalid_argument("report: needs at least one record");
    fs::create_directories(out_dir);
    write_tables(in.records, out_dir);
    if (in.trace && !in.trace->points.empty()) write_curve(in, out_dir);
}

} // namespace starmt::eval
