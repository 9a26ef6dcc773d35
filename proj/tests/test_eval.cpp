#include <doctest.h>

#include "starmt/data/datagen.hpp"
#include "starmt/det/train.hpp"
#include "starmt/eval/evaluate.hpp"
#include "starmt/eval/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace starmt;
using namespace starmt::eval;

namespace {

EvalDetection mk_det(const std::string& seq, int frame, int cls, real conf, data::Box box,
                     long index) {
    return EvalDetection{seq, frame, cls, conf, box, index};
}

EvalGroundTruth mk_gt(const std::string& seq, int frame, int cls, data::Box box) {
    return EvalGroundTruth{seq, frame, cls, box};
}

// Exhaustive oracle: re-walk the greedy matching with explicit loops and
// accumulate the area under the monotonized PR envelope step by step.
real ap_oracle(std::vector<EvalDetection> dets, std::vector<EvalGroundTruth> gts, int cls,
               real thresh) {
    std::vector<EvalDetection> d;
    for (const auto& x : dets)
        if (x.class_id == cls) d.push_back(x);
    std::vector<EvalGroundTruth> g;
    for (const auto& x : gts)
        if (x.class_id == cls) g.push_back(x);
    if (g.empty()) return -1.0;
    std::sort(d.begin(), d.end(), [](const EvalDetection& a, const EvalDetection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.det_index < b.det_index;
    });
    std::vector<bool> used(g.size(), false);
    std::vector<int> is_tp;
    for (const auto& dd : d) {
        int best = -1;
        real best_iou = 0;
        for (size_t i = 0; i < g.size(); ++i) {
            if (used[i] || g[i].seq_id != dd.seq_id || g[i].frame != dd.frame) continue;
            const real v = iou(dd.box, g[i].box);
            if (v > best_iou) {
                best_iou = v;
                best = static_cast<int>(i);
            }
        }
        if (best >= 0 && best_iou >= thresh) {
            used[static_cast<size_t>(best)] = true;
            is_tp.push_back(1);
        } else {
            is_tp.push_back(0);
        }
    }
    // integrate precision over recall steps using the running max from the right
    const size_t n = is_tp.size();
    std::vector<real> prec(n), rec(n);
    int tp = 0;
    for (size_t i = 0; i < n; ++i) {
        tp += is_tp[i];
        prec[i] = static_cast<real>(tp) / static_cast<real>(i + 1);
        rec[i] = static_cast<real>(tp) / static_cast<real>(g.size());
    }
    real ap = 0;
    for (size_t i = 0; i < n; ++i) {
        if (is_tp[i] == 0) continue;
        real pmax = 0;
        for (size_t j = i; j < n; ++j) pmax = std::max(pmax, prec[j]);
        const real r_prev = i == 0 ? 0.0 : rec[i - 1];
        ap += (rec[i] - r_prev) * pmax;
    }
    return ap;
}

} // namespace

TEST_CASE("iou hand cases") {
    CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == doctest::Approx(1.0));
    CHECK(iou({0, 0, 1, 1}, {5, 5, 6, 6}) == 0.0);
    CHECK(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-9));
    CHECK(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(0.1429).epsilon(1e-3));
    // Degenerate zero-area box.
    CHECK(iou({1, 1, 1, 3}, {0, 0, 2, 2}) == 0.0);
    // Touching boxes intersect with zero area.
    CHECK(iou({0, 0, 1, 1}, {1, 0, 2, 1}) == 0.0);
}

TEST_CASE("ap50 hand case: TP, FP, TP gives 0.8333") {
    std::vector<EvalGroundTruth> gts = {mk_gt("s", 0, 0, {0, 0, 10, 10}),
                                        mk_gt("s", 1, 0, {0, 0, 10, 10})};
    std::vector<EvalDetection> dets = {
        mk_det("s", 0, 0, 0.9, {0, 0, 10, 10}, 0),      // TP
        mk_det("s", 0, 0, 0.8, {20, 20, 30, 30}, 1),    // FP
        mk_det("s", 1, 0, 0.7, {0.5, 0, 10.5, 10}, 2)}; // TP (IoU ~ 0.9)
    const ApResult res = ap50(dets, gts);
    CHECK(res.mean_ap == doctest::Approx(0.8333).epsilon(1e-4));
    CHECK(res.per_class.at(0) == doctest::Approx(0.5 + 0.5 * (2.0 / 3.0)).epsilon(1e-9));
}

TEST_CASE("ap50 trivial cases") {
    std::vector<EvalGroundTruth> gts = {mk_gt("s", 0, 0, {0, 0, 10, 10}),
                                        mk_gt("s", 0, 1, {20, 20, 40, 40})};
    // Perfect detections.
    std::vector<EvalDetection> perfect = {mk_det("s", 0, 0, 1.0, {0, 0, 10, 10}, 0),
                                          mk_det("s", 0, 1, 1.0, {20, 20, 40, 40}, 1)};
    const ApResult res = ap50(perfect, gts);
    CHECK(res.mean_ap == doctest::Approx(1.0));
    CHECK(res.per_class.at(0) == doctest::Approx(1.0));
    CHECK(res.per_class.at(1) == doctest::Approx(1.0));

    // No detections at all.
    CHECK(ap50({}, gts).mean_ap == doctest::Approx(0.0));

    // Classes absent from ground truth are excluded from the mean.
    std::vector<EvalDetection> stray = {mk_det("s", 0, 7, 0.9, {0, 0, 10, 10}, 0)};
    const ApResult res2 = ap50(stray, gts);
    CHECK(res2.per_class.count(7) == 0);
    CHECK(res2.mean_ap == doctest::Approx(0.0));

    // Empty ground truth: nothing to average.
    CHECK(ap50(perfect, {}).per_class.empty());
}

TEST_CASE("ap50 agrees with the exhaustive oracle on randomized small cases") {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<EvalGroundTruth> gts;
        std::vector<EvalDetection> dets;
        const int n_gt = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(4)));
        const int n_det = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(6)));
        for (int i = 0; i < n_gt; ++i) {
            const real x = rng.uniform(0, 20), y = rng.uniform(0, 20);
            gts.push_back(mk_gt("s", static_cast<int>(rng.uniform_int(static_cast<uint64_t>(2))),
                             static_cast<int>(rng.uniform_int(static_cast<uint64_t>(2))),
                             {x, y, x + rng.uniform(3, 10), y + rng.uniform(3, 10)}));
        }
        for (int i = 0; i < n_det; ++i) {
            const real x = rng.uniform(0, 20), y = rng.uniform(0, 20);
            dets.push_back(mk_det("s", static_cast<int>(rng.uniform_int(static_cast<uint64_t>(2))),
                               static_cast<int>(rng.uniform_int(static_cast<uint64_t>(2))),
                               rng.uniform(0.05, 1.0),
                               {x, y, x + rng.uniform(3, 10), y + rng.uniform(3, 10)},
                               static_cast<long>(i)));
        }
        const ApResult res = ap50(dets, gts);
        for (const auto& [cls, ap] : res.per_class) {
            const real oracle = ap_oracle(dets, gts, cls, 0.5);
            REQUIRE(oracle >= 0.0);
            CHECK(std::abs(ap - oracle) <= 1e-9);
        }
    }
}

TEST_CASE("ap is invariant to permuting detections with distinct confidences") {
    Rng rng(22);
    std::vector<EvalGroundTruth> gts = {mk_gt("s", 0, 0, {0, 0, 10, 10}),
                                        mk_gt("s", 0, 0, {30, 30, 42, 44})};
    std::vector<EvalDetection> dets = {mk_det("s", 0, 0, 0.9, {0, 1, 10, 11}, 0),
                                       mk_det("s", 0, 0, 0.6, {29, 30, 41, 44}, 1),
                                       mk_det("s", 0, 0, 0.3, {50, 50, 60, 60}, 2),
                                       mk_det("s", 0, 0, 0.8, {2, 2, 12, 12}, 3)};
    const real base = ap50(dets, gts).mean_ap;
    for (int trial = 0; trial < 10; ++trial) {
        for (size_t i = dets.size(); i > 1; --i)
            std::swap(dets[i - 1], dets[rng.uniform_int(i)]);
        CHECK(ap50(dets, gts).mean_ap == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("adding a dominant true positive never decreases ap") {
    std::vector<EvalGroundTruth> gts = {mk_gt("s", 0, 0, {0, 0, 10, 10}),
                                        mk_gt("s", 1, 0, {5, 5, 15, 15})};
    std::vector<EvalDetection> dets = {mk_det("s", 0, 0, 0.5, {0, 0, 10, 10}, 0),
                                       mk_det("s", 0, 0, 0.4, {30, 30, 40, 40}, 1)};
    const real before = ap50(dets, gts).mean_ap;
    dets.push_back(mk_det("s", 1, 0, 0.95, {5, 5, 15, 15}, 2));
    const real after = ap50(dets, gts).mean_ap;
    CHECK(after >= before - 1e-12);
}

TEST_CASE("evaluate_model is deterministic, flags train splits, rejects empty ones") {
    data::GenConfig cfg;
    cfg.T = 3;
    cfg.H = 48;
    cfg.W = 48;
    cfg.n_c = 3;
    data::BuildOptions opt;
    opt.n_sequences = 3;
    opt.split_ratios = {2.0 / 3.0, 0.0, 1.0 / 3.0};
    opt.force = true;
    const std::string root = (fs::temp_directory_path() / "starmt_eval_ds").string();
    const data::DatasetManifest manifest = data::build_dataset(cfg, opt, root, 17);

    det::Arch arch;
    arch.widths = {3, 4, 5, 6};
    arch.n_c = 3;
    const det::ModelParams params = det::ModelParams::init(arch, 5);

    EvalOptions eopt;
    eopt.k = 4;
    const MetricsRecord a = evaluate_model(params, manifest, "test", eopt, "m", "d");
    const MetricsRecord b = evaluate_model(params, manifest, "test", eopt, "m", "d");
    CHECK(a.mean_ap50 == b.mean_ap50);
    CHECK(a.mean_self_entropy == b.mean_self_entropy);
    CHECK(a.n_detections == b.n_detections);
    CHECK(!a.train_split);
    CHECK(a.n_ground_truth > 0);

    const MetricsRecord tr = evaluate_model(params, manifest, "train", eopt, "m", "d");
    CHECK(tr.train_split);

    CHECK_THROWS(evaluate_model(params, manifest, "val", eopt));

    // Round trip through JSON keeps the deterministic metrics identical.
    const std::string rec_path = (fs::temp_directory_path() / "starmt_rec.json").string();
    save_record(a, rec_path);
    const MetricsRecord back = load_record(rec_path);
    CHECK(back.mean_ap50 == a.mean_ap50);
    CHECK(back.mean_self_entropy == a.mean_self_entropy);
    CHECK(back.per_class_ap50 == a.per_class_ap50);
}

TEST_CASE("report writes tables and curve artifacts") {
    const fs::path out = fs::temp_directory_path() / "starmt_report";
    fs::remove_all(out);

    MetricsRecord r1;
    r1.model_id = "source_only";
    r1.dataset_id = "noise";
    r1.mean_ap50 = 0.38;
    MetricsRecord r2 = r1;
    r2.model_id = "pl_se";
    r2.mean_ap50 = 0.478;
    MetricsRecord r3 = r1;
    r3.model_id = "basic_mt";
    r3.mean_ap50 = 0.548;
    MetricsRecord r4 = r1;
    r4.model_id = "star_mt";
    r4.mean_ap50 = 0.576;
    MetricsRecord r5 = r1;
    r5.model_id = "oracle";
    r5.mean_ap50 = 0.61;

    sfda::EntropyTrace trace;
    trace.window = 10;
    for (long i = 0; i < 100; ++i)
        trace.push(i, 0.2 + 0.1 * std::abs(static_cast<real>(i) - 40.0) / 40.0);

    ReportInputs in;
    in.records = {r1, r2, r3, r4, r5};
    in.trace = &trace;
    in.selected_iteration = 40;
    in.snapshot_ap50 = {{9, 0.40}, {49, 0.55}, {99, 0.50}};
    report(in, out.string());

    REQUIRE(fs::exists(out / "ap50_table.csv"));
    REQUIRE(fs::exists(out / "ap50_table.txt"));
    REQUIRE(fs::exists(out / "curve.csv"));
    REQUIRE(fs::exists(out / "curve.png"));

    // Five data rows in the method table.
    std::ifstream csv(out / "ap50_table.csv");
    std::string line;
    int rows = 0;
    bool header_ok = false;
    while (std::getline(csv, line)) {
        if (rows == 0) header_ok = line == "method,noise";
        ++rows;
    }
    CHECK(header_ok);
    CHECK(rows == 6);

    // Curve rows: one per full window.
    std::ifstream curve(out / "curve.csv");
    int curve_rows = 0;
    while (std::getline(curve, line)) ++curve_rows;
    CHECK(curve_rows == 1 + 100 / 10);

    // Single-record report renders a one-row table.
    ReportInputs single;
    single.records = {r1};
    const fs::path out2 = fs::temp_directory_path() / "starmt_report_single";
    fs::remove_all(out2);
    report(single, out2.string());
    std::ifstream csv2(out2 / "ap50_table.csv");
    rows = 0;
    while (std::getline(csv2, line)) ++rows;
    CHECK(rows == 2);

    CHECK_THROWS(report(ReportInputs{}, (out / "none").string()));
}
