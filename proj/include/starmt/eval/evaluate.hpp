#pragma once

#include "starmt/det/proposals.hpp"
#include "starmt/eval/metrics.hpp"

#include <string>

namespace starmt::eval {

struct MetricsRecord {
    std::string model_id;
    std::string dataset_id;
    std::string split;
    bool train_split = false; // evaluating on a train split is allowed but flagged
    std::map<int, real> per_class_ap50;
    real mean_ap50 = 0;
    real mean_self_entropy = 0;
    long n_detections = 0;
    long n_ground_truth = 0;
    real wall_clock_sec = 0; // excluded from determinism comparisons
};

struct EvalOptions {
    int k = 30;
    real nms_iou = 0.5;
    real conf_thresh = 0.05;
};

// Runs the full inference pipeline over every sequence of a split, pooling
// detections and ground truth for AP50 and aggregated teacher scores for
// mean self-entropy. Deterministic for any worker count.
MetricsRecord evaluate_model(const det::ModelParams& params, const data::DatasetManifest& manifest,
                             const std::string& split, const EvalOptions& opt = {},
                             const std::string& model_id = "model",
                             const std::string& dataset_id = "dataset");

void save_record(const MetricsRecord& rec, const std::string& path);
MetricsRecord load_record(const std::string& path);

} // namespace starmt::eval
