#include "starmt/sfda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace starmt::sfda {

TeacherPass teacher_forward(const data::VideoSequence& seq, const det::ModelParams& teacher,
                            int k) {
    TeacherPass pass;
    det::DenseGrid grid = det::backbone_forward(seq.frames, teacher);
    pass.proposals = det::select_topk(grid, k, teacher.arch, seq.height(), seq.width());
    const Tensor aff = det::affinity(pass.proposals);
    pass.agg_scores = det::temporal_aggregate(pass.proposals, aff, teacher.find("tam.w"),
                                              teacher.find("tam.b"), teacher.arch.attn_temp());
    pass.fmap = std::move(grid.feat);
    return pass;
}

namespace {

constexpr real kEps = 1e-7;

ad::Var one_minus(const ad::Var& x) { return ad::add_scalar(ad::scale(x, -1.0), 1.0); }

// Slice teacher feature frames down to the student's retained set so the MSE
// compares spatially corresponding maps.
Tensor slice_frames(const Tensor& fmap, const std::vector<int>& retained) {
    const int C = fmap.dim(1), h = fmap.dim(2), w = fmap.dim(3);
    Tensor out({static_cast<int>(retained.size()), C, h, w});
    const long plane = static_cast<long>(C) * h * w;
    for (size_t i = 0; i < retained.size(); ++i) {
        const real* src = fmap.data() + static_cast<long>(retained[i]) * plane;
        std::copy(src, src + plane, out.data() + static_cast<long>(i) * plane);
    }
    return out;
}

} // namespace

ad::Var certainty_weighted_cls_loss_ad(const Tensor& teacher_scores, const ad::Var& student_scores,
                                       const ad::Var& student_objectness, real eps) {
    const int N = teacher_scores.dim(0);
    if (N == 0) throw std::invalid_argument("certainty_weighted_cls_loss: N must be >= 1");
    ad::Var log_s = ad::log_clamped(student_scores, eps);
    ad::Var log_1ms = ad::log_clamped(one_minus(student_scores), eps);
    Tensor one_minus_t(teacher_scores.shape());
    for (long i = 0; i < teacher_scores.numel(); ++i) one_minus_t[i] = 1.0 - teacher_scores[i];
    ad::Var inner = ad::row_mean(ad::add(ad::mul(ad::constant(teacher_scores), log_s),
                                         ad::mul(ad::constant(one_minus_t), log_1ms)));
    ad::Var weighted = ad::mul(student_objectness, inner);
    return ad::scale(ad::mean_all(weighted), -1.0);
}

real certainty_weighted_cls_loss(const Tensor& teacher_scores, const Tensor& student_scores,
                                 const Tensor& student_objectness, real eps) {
    const int N = teacher_scores.dim(0);
    if (N == 0) return 0.0;
    const int n_c = teacher_scores.dim(1);
    real acc = 0.0;
    for (int i = 0; i < N; ++i) {
        real inner = 0.0;
        for (int c = 0; c < n_c; ++c) {
            const real t = teacher_scores.at(i, c);
            const real s = std::clamp(student_scores.at(i, c), eps, 1.0 - eps);
            inner += t * std::log(s) + (1.0 - t) * std::log(1.0 - s);
        }
        acc += student_objectness[i] * inner / n_c;
    }
    return -acc / N;
}

LossTerms trs_loss(const TeacherPass& teacher, const det::GridAd& student_grid,
                   const std::vector<int>& retained, const det::BoundParams& student_bound,
                   const det::Arch& arch, const LossFlags& flags) {
    LossTerms terms;
    terms.total = ad::constant(Tensor::scalar(0.0));

    if (flags.use_mse) {
        const Tensor t_feat = slice_frames(teacher.fmap, retained);
        ad::Var m = ad::mse(student_grid.feat, ad::constant(t_feat));
        terms.mse = m->val[0];
        terms.total = ad::add(terms.total, m);
    }

    if (flags.use_bce) {
        // Student pool = teacher-selected cells on frames the student kept;
        // the student's own aggregation runs over that pool.
        std::vector<int> frame_pos(static_cast<size_t>(teacher.fmap.dim(0)), -1);
        for (size_t i = 0; i < retained.size(); ++i)
            frame_pos[static_cast<size_t>(retained[i])] = static_cast<int>(i);

        std::vector<ad::Cell> cells;
        std::vector<int> teacher_rows;
        for (size_t i = 0; i < teacher.proposals.size(); ++i) {
            const det::Proposal& p = teacher.proposals[i];
            const int pos = frame_pos[static_cast<size_t>(p.frame)];
            if (pos < 0) continue;
            cells.push_back({pos, p.row, p.col});
            teacher_rows.push_back(static_cast<int>(i));
        }

        if (cells.empty()) {
            terms.bce_skipped = true;
        } else {
            const int P = static_cast<int>(cells.size());
            Tensor target({P, arch.n_c});
            for (int i = 0; i < P; ++i)
                for (int c = 0; c < arch.n_c; ++c)
                    target.at(i, c) = teacher.agg_scores.at(teacher_rows[static_cast<size_t>(i)], c);

            ad::Var feats = ad::gather_cells(student_grid.feat, cells);
            ad::Var logits = ad::gather_cells(student_grid.cls, cells);
            ad::Var refined = det::temporal_aggregate_ad(feats, logits, student_bound.find("tam.w"),
                                                         student_bound.find("tam.b"),
                                                         arch.attn_temp());
            ad::Var b = ad::bce_mean(refined, target, kEps);
            terms.bce = b->val[0];
            terms.total = ad::add(terms.total, b);
        }
    }
    return terms;
}

LossTerms srs_loss(const TeacherPass& teacher, const det::GridAd& student_grid,
                   const det::BoundParams& student_bound, real gamma, const det::Arch& arch,
                   const LossFlags& flags) {
    (void)student_bound;
    LossTerms terms;
    terms.total = ad::constant(Tensor::scalar(0.0));

    if (flags.use_mse) {
        ad::Var m = ad::mse(student_grid.feat, ad::constant(teacher.fmap));
        terms.mse = m->val[0];
        terms.total = ad::add(terms.total, m);
    }

    const int P = static_cast<int>(teacher.proposals.size());
    if (P == 0) {
        terms.bce_skipped = true;
        return terms;
    }

    std::vector<ad::Cell> cells;
    cells.reserve(static_cast<size_t>(P));
    for (const det::Proposal& p : teacher.proposals) cells.push_back({p.frame, p.row, p.col});

    // Student scores come from the single-frame head, before any aggregation.
    ad::Var student_scores = ad::sigmoid(ad::gather_cells(student_grid.cls, cells));

    if (flags.use_bce) {
        ad::Var b = ad::bce_mean(student_scores, teacher.agg_scores, kEps);
        terms.bce = b->val[0];
        terms.total = ad::add(terms.total, b);
    }

    if (flags.use_cls && gamma != 0.0) {
        ad::Var obj = ad::row_mean(ad::sigmoid(ad::gather_cells(student_grid.obj, cells)));
        ad::Var cls = certainty_weighted_cls_loss_ad(teacher.agg_scores, student_scores, obj, kEps);
        terms.cls = cls->val[0];
        terms.total = ad::add(terms.total, ad::scale(cls, gamma));
    }
    return terms;
}

} // namespace starmt::sfda
