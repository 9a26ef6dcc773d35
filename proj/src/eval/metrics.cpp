#include "starmt/eval/metrics.hpp"

#include <algorithm>
#include <set>

namespace starmt::eval {

real iou(const data::Box& a, const data::Box& b) {
    if (!a.well_formed() || !b.well_formed()) return 0.0;
    const real ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const real iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (ix <= 0 || iy <= 0) return 0.0;
    const real inter = ix * iy;
    const real uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

namespace {

struct GtPool {
    std::vector<data::Box> boxes;
    std::vector<bool> matched;
};

real average_precision(std::vector<const EvalDetection*> dets,
                       std::map<std::pair<std::string, int>, GtPool>& gts, long n_gt,
                       real iou_thresh) {
    if (n_gt == 0) return 0.0;
    std::sort(dets.begin(), dets.end(), [](const EvalDetection* a, const EvalDetection* b) {
        if (a->confidence != b->confidence) return a->confidence > b->confidence;
        return a->det_index < b->det_index;
    });

    std::vector<real> precision, recall;
    long tp = 0, fp = 0;
    for (const EvalDetection* d : dets) {
        bool matched = false;
        auto it = gts.find({d->seq_id, d->frame});
        if (it != gts.end()) {
            GtPool& pool = it->second;
            real best = 0.0;
            int best_i = -1;
            for (size_t i = 0; i < pool.boxes.size(); ++i) {
                if (pool.matched[i]) continue;
                const real v = iou(d->box, pool.boxes[i]);
                if (v > best) {
                    best = v;
                    best_i = static_cast<int>(i);
                }
            }
            if (best_i >= 0 && best >= iou_thresh) {
                pool.matched[static_cast<size_t>(best_i)] = true;
                matched = true;
            }
        }
        matched ? ++tp : ++fp;
        precision.push_back(static_cast<real>(tp) / static_cast<real>(tp + fp));
        recall.push_back(static_cast<real>(tp) / static_cast<real>(n_gt));
    }
    if (precision.empty()) return 0.0;

    // All-point interpolation: area under the monotonized PR envelope.
    const size_t n = precision.size();
    std::vector<real> env(n);
    real run = 0.0;
    for (size_t i = n; i-- > 0;) {
        run = std::max(run, precision[i]);
        env[i] = run;
    }
    real ap = 0.0;
    real prev_recall = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (recall[i] > prev_recall) {
            ap += (recall[i] - prev_recall) * env[i];
            prev_recall = recall[i];
        }
    }
    return ap;
}

} // namespace

ApResult ap50(const std::vector<EvalDetection>& detections,
              const std::vector<EvalGroundTruth>& ground_truth, real iou_thresh) {
    std::set<int> classes;
    for (const auto& g : ground_truth) classes.insert(g.class_id);

    ApResult res;
    if (classes.empty()) return res;

    real sum = 0.0;
    for (int c : classes) {
        std::map<std::pair<std::string, int>, GtPool> gts;
        long n_gt = 0;
        for (const auto& g : ground_truth) {
            if (g.class_id != c) continue;
            GtPool& pool = gts[{g.seq_id, g.frame}];
            pool.boxes.push_back(g.box);
            pool.matched.push_back(false);
            ++n_gt;
        }
        std::vector<const EvalDetection*> dets;
        for (const auto& d : detections)
            if (d.class_id == c) dets.push_back(&d);
        const real ap = average_precision(std::move(dets), gts, n_gt, iou_thresh);
        res.per_class[c] = ap;
        sum += ap;
    }
    res.mean_ap = sum / static_cast<real>(classes.size());
    return res;
}

} // namespace starmt::eval
