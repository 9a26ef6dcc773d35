#pragma once

#include "starmt/det/proposals.hpp"

#include <vector>

namespace starmt::sfda {

// Which consistency terms are active; the default is the full objective.
struct LossFlags {
    bool use_mse = true;
    bool use_bce = true;
    bool use_cls = true;
};

// Frozen teacher outputs for one iteration. Built from a plain-tensor
// forward pass, so nothing here can receive gradients.
struct TeacherPass {
    Tensor fmap;                          // [T, d_f, h, w]
    std::vector<det::Proposal> proposals; // top-k over all frames
    Tensor agg_scores;                    // [P, n_c] post-aggregation sigmoid
};

TeacherPass teacher_forward(const data::VideoSequence& seq, const det::ModelParams& teacher,
                            int k);

struct LossTerms {
    ad::Var total;
    real mse = 0;
    real bce = 0;
    real cls = 0;
    bool bce_skipped = false;
};

// Temporal-stage loss: feature MSE over the frames the student can see plus
// BCE between the teacher's post-aggregation top-k class scores and the
// student's post-aggregation scores gathered at the same grid cells.
// `retained` lists the original frame indices the student received, in the
// order they were stacked into the student pass.
LossTerms trs_loss(const TeacherPass& teacher, const det::GridAd& student_grid,
                   const std::vector<int>& retained, const det::BoundParams& student_bound,
                   const det::Arch& arch, const LossFlags& flags = {});

// Spatial-stage loss: feature MSE plus BCE between the teacher's
// post-aggregation scores and the student's pre-aggregation head scores at
// the teacher's cells, plus gamma times the certainty-weighted class loss
// with the student head's sigmoid objectness as the per-proposal weight.
LossTerms srs_loss(const TeacherPass& teacher, const det::GridAd& student_grid,
                   const det::BoundParams& student_bound, real gamma, const det::Arch& arch,
                   const LossFlags& flags = {});

// Certainty-weighted class loss on the graph:
//   L = -(1/N) sum_i p_i * (1/n_c) sum_c [ t*ln(s) + (1-t)*ln(1-s) ]
ad::Var certainty_weighted_cls_loss_ad(const Tensor& teacher_scores, const ad::Var& student_scores,
                                       const ad::Var& student_objectness, real eps = 1e-7);

// Plain-tensor evaluation of the same formula; returns 0 with N == 0.
real certainty_weighted_cls_loss(const Tensor& teacher_scores, const Tensor& student_scores,
                                 const Tensor& student_objectness, real eps = 1e-7);

} // namespace starmt::sfda
