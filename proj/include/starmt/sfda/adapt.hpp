#pragma once

#include "starmt/det/checkpoint.hpp"
#include "starmt/det/train.hpp"
#include "starmt/sfda/augment.hpp"
#include "starmt/sfda/entropy.hpp"
#include "starmt/sfda/losses.hpp"
#include "starmt/sfda/schedule.hpp"

#include <optional>
#include <string>

namespace starmt::sfda {

enum class EmaScope { All, BackboneOnly };

struct TeacherStudent {
    det::ModelParams teacher;
    det::ModelParams student;
    real alpha = 0.9995;
    long iteration = 0;

    static TeacherStudent from_source(const det::ModelParams& source, real alpha);
};

// theta_T <- alpha*theta_T + (1-alpha)*theta_S elementwise over the scope;
// out-of-scope teacher tensors stay byte-identical. Increments iteration.
void ema_update(TeacherStudent& ts, EmaScope scope);

struct AdaptationConfig {
    real alpha = 0.9995;
    real gamma = 0.2;
    int tau = 200;
    long total_iters = 10000;
    int k = 30;
    real mask_max_percent = 75.0;
    real lr0 = 2e-4;
    real lr1 = 1e-4;
    real momentum = 0.9;
    int frames_per_sequence = 32;
    int entropy_window = 100;
    bool trs_first = true;
    SelectionRule selection = SelectionRule::FirstLocalMin;
    LossFlags losses;
    AugmentConfig augment;
    uint64_t seed = 0;
    std::string metrics_path;  // per-iteration JSONL; empty disables
    std::string snapshot_dir;  // teacher snapshots every entropy_window iters; empty keeps them in memory only

    void validate(bool alternating) const;
};

struct Snapshot {
    long iteration = 0;
    det::ModelParams teacher;
};

struct AdaptResult {
    det::ModelParams best;
    long selected_iteration = -1;
    EntropyTrace trace;
    std::vector<Snapshot> snapshots;
};

// The adaptation loop. One sequence per iteration; weak/strong augmented
// pair; TRS masks the student's frames and updates the whole teacher by EMA,
// SRS supervises the student's single-frame head from the teacher's
// aggregated scores and updates only the teacher backbone. Target labels are
// never read (sequences load label-blind).
AdaptResult adapt(const det::ModelParams& source, const data::DatasetManifest& target,
                  const AdaptationConfig& cfg);

// Mean-teacher baseline: every iteration runs the temporal stage.
AdaptResult baseline_basic_mt(const det::ModelParams& source, const data::DatasetManifest& target,
                              const AdaptationConfig& cfg);

struct PseudoLabelConfig {
    real threshold = 0.5; // on objectness * max aggregated class score
    int k = 30;
    int iters = 600;
    real lr0 = 5e-3;
    real lr1 = 5e-4;
    real momentum = 0.9;
    real match_iou = 0.5;
    int entropy_window = 100;
    SelectionRule selection = SelectionRule::FirstLocalMin;
    uint64_t seed = 0;
    std::string metrics_path;
};

// Pseudo-label baseline: one labeling pass with the source model (top-k
// proposals kept when confidence >= threshold, no NMS), then TAM-only
// training against those labels with self-entropy checkpoint selection.
AdaptResult baseline_pseudo_label(const det::ModelParams& source,
                                  const data::DatasetManifest& target,
                                  const PseudoLabelConfig& cfg);

struct OracleConfig {
    det::TamTrainHyper tam;
    uint64_t seed = 0;
};

// Supervised upper bound: TAM-only fine-tuning on target ground truth.
det::ModelParams oracle_finetune(const det::ModelParams& source,
                                 const data::DatasetManifest& labeled_target,
                                 const OracleConfig& cfg);

} // namespace starmt::sfda
