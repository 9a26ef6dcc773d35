#pragma once

#include "starmt/data/types.hpp"

#include <map>
#include <string>
#include <vector>

namespace starmt::eval {

// Intersection over union; 0 for disjoint or degenerate boxes.
real iou(const data::Box& a, const data::Box& b);

struct EvalDetection {
    std::string seq_id;
    int frame = 0;
    int class_id = 0;
    real confidence = 0;
    data::Box box;
    long det_index = 0; // deterministic tie-break order
};

struct EvalGroundTruth {
    std::string seq_id;
    int frame = 0;
    int class_id = 0;
    data::Box box;
};

struct ApResult {
    std::map<int, real> per_class; // classes present in ground truth
    real mean_ap = 0;
};

// VOC-style AP at a fixed IoU threshold: detections sorted by confidence
// (ties by det_index), greedily matched to the highest-IoU unmatched ground
// truth of the same (sequence, frame, class); all-point interpolation of the
// monotonized precision envelope. Classes without ground truth are excluded
// from the mean.
ApResult ap50(const std::vector<EvalDetection>& detections,
              const std::vector<EvalGroundTruth>& ground_truth, real iou_thresh = 0.5);

} // namespace starmt::eval
