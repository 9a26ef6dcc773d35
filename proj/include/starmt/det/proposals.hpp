#pragma once

#include "starmt/det/model.hpp"

#include <vector>

namespace starmt::det {

// One selected detection candidate flowing through temporal aggregation.
struct Proposal {
    int frame = 0;
    int row = 0;
    int col = 0;
    std::vector<real> feature;     // [d_f]
    real objectness = 0;           // sigmoid
    std::vector<real> scores;      // [n_c] sigmoid, pre-aggregation
    std::vector<real> cls_logits;  // [n_c] raw head logits
    data::Box box;
};

struct Detection {
    int frame = 0;
    int class_id = 0;
    real confidence = 0; // objectness * max class score
    data::Box box;
};

// Per frame, the k cells with the highest objectness * max class score.
// Ties break by (row, col) ascending; k is clamped to the cell count.
std::vector<Proposal> select_topk(const DenseGrid& grid, int k, const Arch& arch,
                                  int frame_h, int frame_w);

// Cosine similarity of proposal features. Zero-norm features are similar
// only to themselves.
Tensor affinity(const std::vector<Proposal>& proposals);

// Attention-style mix over the proposal pool: softmax(affinity/temp) blends
// features, a learned projection of the blend is added residually to each
// proposal's own class logits. Objectness and boxes pass through untouched.
// Returns refined sigmoid class scores, [N, n_c].
Tensor temporal_aggregate(const std::vector<Proposal>& proposals, const Tensor& affinity,
                          const Tensor& tam_w, const Tensor& tam_b, real temp);

// Same aggregation on the autodiff graph. features/logits: [P, d_f], [P, n_c].
ad::Var temporal_aggregate_ad(const ad::Var& features, const ad::Var& cls_logits,
                              const ad::Var& tam_w, const ad::Var& tam_b, real temp);

// Greedy per-frame NMS over confidence-sorted detections; suppresses boxes
// with IoU strictly above the threshold.
std::vector<Detection> nms(std::vector<Detection> dets, real iou_thresh);

struct SequenceInference {
    std::vector<Proposal> proposals;
    Tensor refined_scores; // [P, n_c] post-aggregation
    std::vector<Detection> detections;
};

// Full inference pipeline: backbone -> top-k -> affinity -> aggregation ->
// per-frame NMS over confidence >= conf_thresh.
SequenceInference infer_sequence(const data::VideoSequence& seq, const ModelParams& params, int k,
                                 real nms_iou = 0.5, real conf_thresh = 0.05);

std::vector<Detection> detect_sequence(const data::VideoSequence& seq, const ModelParams& params,
                                       int k, real nms_iou = 0.5, real conf_thresh = 0.05);

} // namespace starmt::det
