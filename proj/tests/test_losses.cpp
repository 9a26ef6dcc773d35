#include <doctest.h>

#include "starmt/core/kernels.hpp"
#include "starmt/det/train.hpp"
#include "starmt/sfda/augment.hpp"
#include "starmt/sfda/entropy.hpp"
#include "starmt/sfda/losses.hpp"

#include <cmath>

using namespace starmt;
using namespace starmt::sfda;

namespace {

det::Arch reduced_arch() {
    det::Arch arch;
    arch.widths = {3, 4, 5, 6};
    arch.n_c = 2;
    return arch;
}

Tensor random_frames(int T, int H, int W, Rng& rng) {
    Tensor t({T, H, W, 3});
    for (long i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
    return t;
}

data::VideoSequence wrap_frames(Tensor frames) {
    data::VideoSequence seq;
    seq.frames = std::move(frames);
    return seq;
}

// Shared FD harness: perturbs student parameters through a full loss build.
void check_loss_gradients(const det::ModelParams& student,
                          const std::function<ad::Var(const det::BoundParams&)>& build,
                          int n_probes, real tol = 1e-3) {
    const det::BoundParams bound = det::bind(student, true, true);
    const ad::Var loss = build(bound);
    ad::backward(loss);

    Rng rng(4711);
    int checked = 0;
    while (checked < n_probes) {
        const size_t ti = rng.uniform_int(student.tensors.size());
        const det::ParamTensor& pt = student.tensors[ti];
        const long idx = static_cast<long>(rng.uniform_int(static_cast<uint64_t>(pt.t.numel())));

        auto eval_with = [&](real delta) {
            det::ModelParams perturbed = student;
            perturbed.tensors[ti].t[idx] += delta;
            const det::BoundParams frozen = det::bind(perturbed, false, false);
            return build(frozen)->val[0];
        };
        const real eps = 1e-6;
        const real fd = (eval_with(eps) - eval_with(-eps)) / (2 * eps);
        const ad::Var v = bound.find(pt.name);
        const real got = v->grad.numel() == pt.t.numel() ? v->grad[idx] : 0.0;
        if (std::abs(fd) < 1e-9 && std::abs(got) < 1e-9) continue; // off-path probe
        INFO("tensor ", pt.name, " idx ", idx, " fd=", fd, " ad=", got);
        CHECK(std::abs(got - fd) / std::max(std::abs(fd), static_cast<real>(1e-8)) < tol);
        ++checked;
    }
}

} // namespace

TEST_CASE("certainty-weighted class loss hand case: 0.1116") {
    Tensor s_t({1, 2}, {1.0, 0.0});
    Tensor s_s({1, 2}, {0.8, 0.2});
    Tensor p({1}, {0.5});
    const real got = certainty_weighted_cls_loss(s_t, s_s, p);
    CHECK(got == doctest::Approx(0.1116).epsilon(1e-3));
    CHECK(got == doctest::Approx(-0.5 * 0.5 * (std::log(0.8) + std::log(0.8))).epsilon(1e-12));

    // Graph version agrees.
    const ad::Var ad_loss =
        certainty_weighted_cls_loss_ad(s_t, ad::constant(s_s), ad::constant(p));
    CHECK(ad_loss->val[0] == doctest::Approx(got).epsilon(1e-12));
}

TEST_CASE("certainty loss is near zero at matched one-hot scores and linear in p") {
    Tensor s_t({1, 2}, {1.0 - 1e-7, 1e-7});
    Tensor s_s({1, 2}, {1.0 - 1e-7, 1e-7});
    Tensor p({1}, {0.9});
    CHECK(certainty_weighted_cls_loss(s_t, s_s, p) == doctest::Approx(0.0).epsilon(1e-5));

    Tensor s_t2({1, 2}, {0.7, 0.3});
    Tensor s_s2({1, 2}, {0.4, 0.6});
    Tensor p1({1}, {0.3});
    Tensor p2({1}, {0.6});
    const real l1 = certainty_weighted_cls_loss(s_t2, s_s2, p1);
    const real l2 = certainty_weighted_cls_loss(s_t2, s_s2, p2);
    CHECK(l2 == doctest::Approx(2.0 * l1).epsilon(1e-12));

    // Empty set degrades to zero.
    CHECK(certainty_weighted_cls_loss(Tensor({0, 2}), Tensor({0, 2}), Tensor({0})) == 0.0);
}

TEST_CASE("mean self-entropy hand values and bounds") {
    Tensor extremes({2, 2}, {0.0, 1.0, 1.0, 0.0});
    CHECK(mean_self_entropy(extremes) == 0.0);

    Tensor half({3, 2});
    half.fill(0.5);
    CHECK(mean_self_entropy(half) == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-12));
    CHECK(mean_self_entropy(half) == doctest::Approx(0.3466).epsilon(1e-4));

    Tensor inv_e({2, 3});
    inv_e.fill(std::exp(-1.0));
    CHECK(mean_self_entropy(inv_e) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(mean_self_entropy(inv_e) == doctest::Approx(0.3679).epsilon(1e-4));

    // Bounds hold for arbitrary scores.
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor s({4, 5});
        for (long i = 0; i < s.numel(); ++i) s[i] = rng.uniform();
        const real h = mean_self_entropy(s);
        CHECK(h >= 0.0);
        CHECK(h <= std::exp(-1.0) + 1e-12);
    }
}

TEST_CASE("trs loss: matched features zero the MSE and half scores give ln 2") {
    const det::Arch arch = reduced_arch();
    const det::ModelParams model = det::ModelParams::init(arch, 1);
    Rng rng(2);
    const data::VideoSequence seq = wrap_frames(random_frames(2, 16, 16, rng));

    TeacherPass teacher = teacher_forward(seq, model, 3);
    const std::vector<int> retained = {0, 1};

    // Student pass with identical params on identical frames: MSE term is 0.
    const det::BoundParams bound = det::bind(model, true, true);
    const det::GridAd grid = det::backbone_forward_ad(seq.frames, bound, arch);
    LossFlags mse_only;
    mse_only.use_bce = false;
    const LossTerms terms = trs_loss(teacher, grid, retained, bound, arch, mse_only);
    CHECK(terms.mse == doctest::Approx(0.0).epsilon(1e-12));

    // Forced half-scores meet half-targets: BCE is exactly ln 2.
    TeacherPass flat = teacher;
    flat.agg_scores.fill(0.5);
    det::ModelParams zeroed = model;
    zeroed.find("head_cls.w").fill(0.0);
    zeroed.find("head_cls.b").fill(0.0);
    zeroed.find("tam.w").fill(0.0);
    zeroed.find("tam.b").fill(0.0);
    const det::BoundParams zb = det::bind(zeroed, true, true);
    const det::GridAd zgrid = det::backbone_forward_ad(seq.frames, zb, arch);
    LossFlags bce_only;
    bce_only.use_mse = false;
    const LossTerms zt = trs_loss(flat, zgrid, retained, zb, arch, bce_only);
    CHECK(zt.bce == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // Agreement at the extremes vanishes within clamp tolerance.
    TeacherPass hot = teacher;
    for (long i = 0; i < hot.agg_scores.numel(); ++i)
        hot.agg_scores[i] = hot.agg_scores[i] > 0.5 ? 1.0 : 0.0;
    // no assertion on value needed: just exercise extreme targets
    const LossTerms ht = trs_loss(hot, zgrid, retained, zb, arch, bce_only);
    CHECK(std::isfinite(ht.bce));
}

TEST_CASE("trs loss skips the BCE term when the student kept no teacher frames") {
    const det::Arch arch = reduced_arch();
    const det::ModelParams model = det::ModelParams::init(arch, 1);
    Rng rng(3);
    const data::VideoSequence seq = wrap_frames(random_frames(2, 16, 16, rng));
    TeacherPass teacher = teacher_forward(seq, model, 2);
    // Pretend the teacher only selected on frame 1 while the student kept 0.
    for (auto& p : teacher.proposals) p.frame = 1;
    const std::vector<int> retained = {0};
    Tensor one_frame({1, 16, 16, 3});
    std::copy(seq.frames.data(), seq.frames.data() + one_frame.numel(), one_frame.data());
    const det::BoundParams bound = det::bind(model, true, true);
    const det::GridAd grid = det::backbone_forward_ad(one_frame, bound, arch);
    const LossTerms terms = trs_loss(teacher, grid, retained, bound, arch);
    CHECK(terms.bce_skipped);
    CHECK(terms.bce == 0.0);
}

TEST_CASE("srs loss reduces to its parts and honors gamma") {
    const det::Arch arch = reduced_arch();
    const det::ModelParams teacher_model = det::ModelParams::init(arch, 1);
    det::ModelParams student_model = det::ModelParams::init(arch, 9); // different weights
    Rng rng(4);
    const data::VideoSequence seq = wrap_frames(random_frames(2, 16, 16, rng));
    const TeacherPass teacher = teacher_forward(seq, teacher_model, 3);

    const det::BoundParams bound = det::bind(student_model, true, true);
    const det::GridAd grid = det::backbone_forward_ad(seq.frames, bound, arch);

    const LossTerms at_zero = srs_loss(teacher, grid, bound, 0.0, arch);
    const LossTerms at_gamma = srs_loss(teacher, grid, bound, 0.2, arch);
    CHECK(at_zero.total->val[0] == doctest::Approx(at_zero.mse + at_zero.bce).epsilon(1e-12));
    CHECK(at_gamma.total->val[0] ==
          doctest::Approx(at_gamma.mse + at_gamma.bce + 0.2 * at_gamma.cls).epsilon(1e-12));
    CHECK(at_zero.mse == at_gamma.mse);
    CHECK(at_zero.bce == at_gamma.bce);

    // gamma = 0 equals the TRS value on identical passes: same cells, but
    // the student side here is pre-aggregation, so compare term by term
    // against an independent evaluation instead.
    std::vector<ad::Cell> cells;
    for (const auto& p : teacher.proposals) cells.push_back({p.frame, p.row, p.col});
    const det::GridAd grid2 = det::backbone_forward_ad(seq.frames, bound, arch);
    const ad::Var scores = ad::sigmoid(ad::gather_cells(grid2.cls, cells));
    const ad::Var bce = ad::bce_mean(scores, teacher.agg_scores, 1e-7);
    CHECK(at_zero.bce == doctest::Approx(bce->val[0]).epsilon(1e-12));
}

TEST_CASE("gradient suite: supervised detection loss matches finite differences") {
    const det::Arch arch = reduced_arch();
    const det::ModelParams model = det::ModelParams::init(arch, 21);
    Rng rng(6);
    const Tensor frames = random_frames(2, 16, 16, rng);
    std::vector<data::BoxLabel> labels;
    labels.push_back({0, 1, {2.0, 3.0, 9.0, 10.0}, 0});
    labels.push_back({1, 0, {8.0, 6.0, 14.0, 13.0}, 1});

    check_loss_gradients(
        model,
        [&](const det::BoundParams& bound) {
            const det::GridAd grid = det::backbone_forward_ad(frames, bound, arch);
            return det::supervised_sequence_loss(grid, labels, arch, 1.0, 1.0, 5.0);
        },
        50);
}

TEST_CASE("gradient suite: trs loss matches finite differences") {
    const det::Arch arch = reduced_arch();
    const det::ModelParams teacher_model = det::ModelParams::init(arch, 31);
    const det::ModelParams student_model = det::ModelParams::init(arch, 32);
    Rng rng(7);
    const data::VideoSequence weak = wrap_frames(random_frames(2, 16, 16, rng));
    const data::VideoSequence strong = wrap_frames(random_frames(2, 16, 16, rng));
    const TeacherPass teacher = teacher_forward(weak, teacher_model, 3);
    const std::vector<int> retained = {0, 1};

    check_loss_gradients(
        student_model,
        [&](const det::BoundParams& bound) {
            const det::GridAd grid = det::backbone_forward_ad(strong.frames, bound, arch);
            return trs_loss(teacher, grid, retained, bound, arch).total;
        },
        50);
}

TEST_CASE("gradient suite: srs loss (with certainty term) matches finite differences") {
    const det::Arch arch = reduced_arch();
    const det::ModelParams teacher_model = det::ModelParams::init(arch, 41);
    const det::ModelParams student_model = det::ModelParams::init(arch, 42);
    Rng rng(8);
    const data::VideoSequence weak = wrap_frames(random_frames(2, 16, 16, rng));
    const data::VideoSequence strong = wrap_frames(random_frames(2, 16, 16, rng));
    const TeacherPass teacher = teacher_forward(weak, teacher_model, 3);

    check_loss_gradients(
        student_model,
        [&](const det::BoundParams& bound) {
            const det::GridAd grid = det::backbone_forward_ad(strong.frames, bound, arch);
            return srs_loss(teacher, grid, bound, 0.2, arch).total;
        },
        50);
}

TEST_CASE("teacher outputs never join the student graph") {
    const det::Arch arch = reduced_arch();
    const det::ModelParams teacher_model = det::ModelParams::init(arch, 51);
    const det::ModelParams student_model = det::ModelParams::init(arch, 52);
    Rng rng(9);
    const data::VideoSequence seq = wrap_frames(random_frames(2, 16, 16, rng));
    const TeacherPass teacher = teacher_forward(seq, teacher_model, 3);

    const det::BoundParams bound = det::bind(student_model, true, true);
    const det::GridAd grid = det::backbone_forward_ad(seq.frames, bound, arch);
    const LossTerms terms = srs_loss(teacher, grid, bound, 0.2, arch);
    ad::backward(terms.total);

    // Student leaves carry gradients; the teacher pass is plain tensors, so
    // there is nothing on the teacher side that could.
    long with_grad = 0;
    for (const auto& [name, var] : bound.vars)
        if (var->grad.numel() > 0) ++with_grad;
    CHECK(with_grad > 0);
}
