#include <doctest.h>

#include "starmt/data/datagen.hpp"
#include "starmt/data/dataset.hpp"
#include "starmt/sfda/adapt.hpp"

#include <cmath>
#include <filesystem>

namespace fs = std::filesystem;
using namespace starmt;
using namespace starmt::sfda;

namespace {

det::Arch tiny_arch() {
    det::Arch arch;
    arch.widths = {3, 4, 5, 6};
    arch.n_c = 3;
    return arch;
}

// One shared tiny on-disk dataset for the adaptation tests.
const data::DatasetManifest& tiny_dataset() {
    static const data::DatasetManifest manifest = [] {
        data::GenConfig cfg;
        cfg.T = 4;
        cfg.H = 48;
        cfg.W = 48;
        cfg.n_c = 3;
        cfg.min_objects = 1;
        cfg.max_objects = 2;
        cfg.min_size = 12;
        cfg.max_size = 20;
        data::BuildOptions opt;
        opt.n_sequences = 4;
        opt.split_ratios = {0.75, 0.0, 0.25};
        opt.force = true;
        const std::string root = (fs::temp_directory_path() / "starmt_sfda_ds").string();
        return data::build_dataset(cfg, opt, root, 99);
    }();
    return manifest;
}

AdaptationConfig tiny_config(uint64_t seed) {
    AdaptationConfig cfg;
    cfg.alpha = 0.99;
    cfg.tau = 2;
    cfg.total_iters = 6;
    cfg.k = 4;
    cfg.lr0 = 1e-3;
    cfg.lr1 = 1e-3;
    cfg.frames_per_sequence = 4;
    cfg.entropy_window = 2;
    cfg.seed = seed;
    return cfg;
}

bool params_equal(const det::ModelParams& a, const det::ModelParams& b) {
    for (size_t i = 0; i < a.tensors.size(); ++i)
        for (long j = 0; j < a.tensors[i].t.numel(); ++j)
            if (a.tensors[i].t[j] != b.tensors[i].t[j]) return false;
    return true;
}

} // namespace

TEST_CASE("stage_of follows the alternation intervals") {
    for (long t = 0; t < 100; ++t) CHECK(stage_of(t, 100) == Stage::TRS);
    for (long t = 100; t < 200; ++t) CHECK(stage_of(t, 100) == Stage::SRS);
    CHECK(stage_of(200, 100) == Stage::TRS);

    // tau = 1 alternates strictly.
    for (long t = 0; t < 20; ++t)
        CHECK(stage_of(t, 1) == (t % 2 == 0 ? Stage::TRS : Stage::SRS));

    // Exhaustive scan of the interval formula for the sweep values.
    for (int tau : {1, 50, 100, 200, 500}) {
        for (long t = 0; t < 10L * tau; ++t) {
            const long k = t / (2L * tau);
            const bool in_trs = t >= 2 * k * tau && t < 2 * k * tau + tau;
            CHECK(stage_of(t, tau) == (in_trs ? Stage::TRS : Stage::SRS));
        }
    }

    // Parity: the stage always flips tau iterations later.
    for (int tau : {1, 3, 7, 50}) {
        for (long t = 0; t < 6L * tau; ++t) CHECK(stage_of(t, tau) != stage_of(t + tau, tau));
    }

    CHECK_THROWS(stage_of(-1, 10));
    CHECK_THROWS(stage_of(0, 0));
}

TEST_CASE("ema fixed points, scalar case and closed form") {
    const det::Arch arch = tiny_arch();
    const det::ModelParams source = det::ModelParams::init(arch, 0);

    // alpha ~ 1: teacher unchanged.
    TeacherStudent near_one = TeacherStudent::from_source(source, 1.0 - 1e-15);
    near_one.student = det::ModelParams::init(arch, 1);
    const det::ModelParams before = near_one.teacher;
    ema_update(near_one, EmaScope::All);
    for (size_t i = 0; i < before.tensors.size(); ++i)
        for (long j = 0; j < before.tensors[i].t.numel(); ++j)
            CHECK(near_one.teacher.tensors[i].t[j] ==
                  doctest::Approx(before.tensors[i].t[j]).epsilon(1e-12));
    CHECK(near_one.iteration == 1);

    // Scalar case: 0.9*1.0 + 0.1*0.0 = 0.9.
    TeacherStudent ts = TeacherStudent::from_source(source, 0.9);
    ts.teacher.find("tam.b").fill(1.0);
    ts.student.find("tam.b").fill(0.0);
    ema_update(ts, EmaScope::All);
    CHECK(ts.teacher.find("tam.b")[0] == doctest::Approx(0.9).epsilon(1e-15));

    // Closed form after n updates with constant student.
    const real alpha = 0.97;
    TeacherStudent cf = TeacherStudent::from_source(source, alpha);
    cf.student = det::ModelParams::init(arch, 2);
    const det::ModelParams t0 = cf.teacher;
    const int n = 25;
    for (int i = 0; i < n; ++i) ema_update(cf, EmaScope::All);
    const real an = std::pow(alpha, n);
    for (size_t i = 0; i < t0.tensors.size(); ++i)
        for (long j = 0; j < t0.tensors[i].t.numel(); ++j) {
            const real expected =
                an * t0.tensors[i].t[j] + (1.0 - an) * cf.student.tensors[i].t[j];
            CHECK(std::abs(cf.teacher.tensors[i].t[j] - expected) < 1e-5);
        }

    CHECK_THROWS(TeacherStudent::from_source(source, 1.0));
    CHECK_THROWS(TeacherStudent::from_source(source, 0.0));
}

TEST_CASE("backbone-only ema leaves tam tensors byte-identical") {
    const det::Arch arch = tiny_arch();
    TeacherStudent ts = TeacherStudent::from_source(det::ModelParams::init(arch, 3), 0.5);
    ts.student = det::ModelParams::init(arch, 4);
    const Tensor tam_w = ts.teacher.find("tam.w");
    const Tensor tam_b = ts.teacher.find("tam.b");
    ema_update(ts, EmaScope::BackboneOnly);
    for (long i = 0; i < tam_w.numel(); ++i) CHECK(ts.teacher.find("tam.w")[i] == tam_w[i]);
    for (long i = 0; i < tam_b.numel(); ++i) CHECK(ts.teacher.find("tam.b")[i] == tam_b[i]);
    // Backbone did move.
    CHECK(ts.teacher.find("conv1.w")[0] != doctest::Approx(0.0).epsilon(0));
    bool moved = false;
    const det::ModelParams fresh = det::ModelParams::init(arch, 3);
    for (long i = 0; i < fresh.find("conv1.w").numel() && !moved; ++i)
        moved = ts.teacher.find("conv1.w")[i] != fresh.find("conv1.w")[i];
    CHECK(moved);
}

TEST_CASE("entropy trace smoothing and selection rules") {
    // Monotonically decreasing: no interior minimum, global min = last.
    EntropyTrace mono;
    mono.window = 3;
    for (long i = 0; i < 20; ++i) mono.push(i, 1.0 - 0.01 * static_cast<real>(i));
    CHECK(select_checkpoint(mono) == 19);

    // V shape: the valley wins.
    EntropyTrace vee;
    vee.window = 2;
    for (long i = 0; i < 21; ++i) vee.push(i, std::abs(static_cast<real>(i) - 10.0));
    CHECK(select_checkpoint(vee) == 10);

    // Two dips: 0.30 early, 0.28 late. The first-local-minimum rule lands on
    // the early dip (within the smoothing lag) even though the later dip is
    // deeper; the global-minimum rule picks the deeper one.
    EntropyTrace dips;
    dips.window = 5;
    auto dip_value = [](long i) {
        const real d1 = 0.30 + 0.10 * std::abs(static_cast<real>(i) - 20.0) / 20.0;
        const real d2 = 0.28 + 0.10 * std::abs(static_cast<real>(i) - 80.0) / 20.0;
        return std::min(d1, d2);
    };
    for (long i = 0; i <= 100; ++i) dips.push(i, dip_value(i));
    const long first = select_checkpoint(dips);
    CHECK(first >= 20 - dips.window);
    CHECK(first <= 20 + dips.window);
    const long global = select_checkpoint(dips, SelectionRule::GlobalMin);
    CHECK(global >= 80 - dips.window);
    CHECK(global <= 80 + dips.window);

    // Shorter than the window: raw global minimum.
    EntropyTrace shorty;
    shorty.window = 50;
    shorty.push(0, 0.5);
    shorty.push(1, 0.1);
    shorty.push(2, 0.4);
    CHECK(select_checkpoint(shorty) == 1);

    CHECK_THROWS(select_checkpoint(EntropyTrace{}));
    CHECK_THROWS([] {
        EntropyTrace bad;
        bad.push(5, 0.1);
        bad.push(5, 0.2);
    }());

    // Trailing window mean matches a direct computation.
    EntropyTrace t;
    t.window = 3;
    const real vals[] = {1.0, 2.0, 6.0, 3.0};
    for (long i = 0; i < 4; ++i) t.push(i, vals[i]);
    const std::vector<real> s = smoothed_entropy(t);
    CHECK(s[0] == doctest::Approx(1.0));
    CHECK(s[1] == doctest::Approx(1.5));
    CHECK(s[2] == doctest::Approx(3.0));
    CHECK(s[3] == doctest::Approx(11.0 / 3.0));
}

TEST_CASE("adapt with zero iterations returns the source unchanged") {
    const det::ModelParams source = det::ModelParams::init(tiny_arch(), 7);
    AdaptationConfig cfg = tiny_config(1);
    cfg.total_iters = 0;
    const AdaptResult res = adapt(source, tiny_dataset(), cfg);
    CHECK(params_equal(res.best, source));
    CHECK(res.trace.points.empty());
    CHECK(res.selected_iteration == -1);
}

TEST_CASE("adapt validates its configuration") {
    const det::ModelParams source = det::ModelParams::init(tiny_arch(), 7);
    AdaptationConfig cfg = tiny_config(1);
    cfg.tau = 4; // 2*tau > total_iters = 6
    CHECK_THROWS_AS(adapt(source, tiny_dataset(), cfg), std::invalid_argument);
    cfg = tiny_config(1);
    cfg.losses.use_bce = false;
    cfg.losses.use_cls = false;
    CHECK_THROWS_AS(adapt(source, tiny_dataset(), cfg), std::invalid_argument);
}

TEST_CASE("adaptation never opens label files and is deterministic") {
    const det::ModelParams source = det::ModelParams::init(tiny_arch(), 8);
    const data::DatasetManifest& ds = tiny_dataset();

    const uint64_t opens_before = data::label_files_opened();
    const AdaptResult a = adapt(source, ds, tiny_config(5));
    const AdaptResult b = adapt(source, ds, tiny_config(5));
    CHECK(data::label_files_opened() == opens_before);

    CHECK(a.trace.points.size() == 6);
    for (size_t i = 0; i < a.trace.points.size(); ++i)
        CHECK(a.trace.points[i].second == b.trace.points[i].second);
    CHECK(params_equal(a.best, b.best));
    CHECK(a.selected_iteration == b.selected_iteration);

    // Entropy values stay within the theoretical band.
    for (const auto& [iter, h] : a.trace.points) {
        CHECK(h >= 0.0);
        CHECK(h <= std::exp(-1.0) + 1e-12);
    }
}

TEST_CASE("srs iterations leave teacher tam tensors byte-identical") {
    const det::ModelParams source = det::ModelParams::init(tiny_arch(), 9);
    AdaptationConfig cfg = tiny_config(6);
    cfg.tau = 1;
    cfg.total_iters = 2; // iteration 0: TRS, iteration 1: SRS
    cfg.entropy_window = 1;
    const AdaptResult after_trs = [&] {
        AdaptationConfig c = cfg;
        c.total_iters = 2;
        return adapt(source, tiny_dataset(), c);
    }();
    REQUIRE(after_trs.snapshots.size() >= 2);
    // Snapshot 0 is the teacher after the TRS step, snapshot 1 after SRS;
    // the tam scope must not have moved between them.
    const det::ModelParams& t0 = after_trs.snapshots[0].teacher;
    const det::ModelParams& t1 = after_trs.snapshots[1].teacher;
    for (size_t i = 0; i < t0.tensors.size(); ++i) {
        if (t0.tensors[i].scope != det::Scope::Tam) continue;
        for (long j = 0; j < t0.tensors[i].t.numel(); ++j)
            CHECK(t0.tensors[i].t[j] == t1.tensors[i].t[j]);
    }
}

TEST_CASE("basic mean-teacher matches adapt over the leading TRS stage") {
    const det::ModelParams source = det::ModelParams::init(tiny_arch(), 10);
    AdaptationConfig star_cfg = tiny_config(11);
    star_cfg.tau = 2;
    star_cfg.total_iters = 4;
    star_cfg.entropy_window = 1; // snapshot every iteration

    AdaptationConfig basic_cfg = star_cfg;
    basic_cfg.total_iters = 2; // only the iterations both runs share

    const AdaptResult star = adapt(source, tiny_dataset(), star_cfg);
    const AdaptResult basic = baseline_basic_mt(source, tiny_dataset(), basic_cfg);

    // Identical seeds: the first tau iterations are the same TRS steps.
    for (int i = 0; i < 2; ++i)
        CHECK(star.trace.points[static_cast<size_t>(i)].second ==
              basic.trace.points[static_cast<size_t>(i)].second);
    CHECK(params_equal(star.snapshots[1].teacher, basic.snapshots[1].teacher));
}

TEST_CASE("pseudo-label baseline: threshold edge cases and backbone freeze") {
    const det::Arch arch = tiny_arch();
    const det::ModelParams source = det::ModelParams::init(arch, 12);
    const data::DatasetManifest& ds = tiny_dataset();

    PseudoLabelConfig pl;
    pl.k = 4;
    pl.iters = 4;
    pl.entropy_window = 2;
    pl.seed = 3;

    // Impossible threshold: confidence is a product of open-interval terms.
    pl.threshold = 1.0;
    CHECK_THROWS(baseline_pseudo_label(source, ds, pl));

    // Zero threshold: every top-k proposal becomes a label and training runs.
    pl.threshold = 0.0;
    const uint64_t opens_before = data::label_files_opened();
    const AdaptResult res = baseline_pseudo_label(source, ds, pl);
    CHECK(data::label_files_opened() == opens_before); // label-blind

    // Backbone tensors byte-identical before/after TAM-only training.
    for (size_t i = 0; i < source.tensors.size(); ++i) {
        if (source.tensors[i].scope != det::Scope::Backbone) continue;
        for (long j = 0; j < source.tensors[i].t.numel(); ++j)
            CHECK(res.best.tensors[i].t[j] == source.tensors[i].t[j]);
    }
}

TEST_CASE("oracle fine-tuning freezes the backbone and needs labels") {
    const det::Arch arch = tiny_arch();
    const det::ModelParams source = det::ModelParams::init(arch, 13);
    OracleConfig oc;
    oc.tam.iters = 4;
    oc.tam.k = 4;
    oc.seed = 4;
    const det::ModelParams tuned = oracle_finetune(source, tiny_dataset(), oc);
    for (size_t i = 0; i < source.tensors.size(); ++i) {
        if (source.tensors[i].scope != det::Scope::Backbone) continue;
        for (long j = 0; j < source.tensors[i].t.numel(); ++j)
            CHECK(tuned.tensors[i].t[j] == source.tensors[i].t[j]);
    }
    bool tam_moved = false;
    for (long j = 0; j < source.find("tam.w").numel() && !tam_moved; ++j)
        tam_moved = tuned.find("tam.w")[j] != source.find("tam.w")[j];
    CHECK(tam_moved);
}

TEST_CASE("frame masking keeps the right count and always one frame") {
    Rng rng(5);
    const std::vector<int> all = mask_frames(8, 0.0, rng);
    CHECK(all.size() == 8);

    const std::vector<int> masked = mask_frames(8, 75.0, rng);
    CHECK(masked.size() == 2); // floor(75*8/100) = 6 removed

    for (int trial = 0; trial < 100; ++trial) {
        const real r = rng.uniform(0.0, 75.0);
        const int t_len = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(12)));
        const std::vector<int> kept = mask_frames(t_len, r, rng);
        const int expected = t_len - std::min(static_cast<int>(std::floor(r * t_len / 100.0)),
                                              t_len - 1);
        CHECK(static_cast<int>(kept.size()) == expected);
        CHECK(!kept.empty());
        for (size_t i = 1; i < kept.size(); ++i) CHECK(kept[i] > kept[i - 1]);
        for (int f : kept) {
            CHECK(f >= 0);
            CHECK(f < t_len);
        }
    }
    CHECK_THROWS(mask_frames(4, 80.0, rng));
    CHECK_THROWS(mask_frames(4, -1.0, rng));
}

TEST_CASE("augment: identity parameters reproduce the input bit-exactly") {
    data::GenConfig gcfg;
    gcfg.T = 2;
    gcfg.H = 32;
    gcfg.W = 32;
    const data::VideoSequence seq = data::generate_sequence(gcfg, 44);

    AugmentConfig acfg;
    acfg.flip_prob = 0.0;
    acfg.perspective_frac = 0.0;
    acfg.weak_chroma = 0.0;
    acfg.strong_chroma = 0.0;
    acfg.erase_area_max = 0.0;
    acfg.erase_area_min = 0.0;
    Rng rng(1);
    const auto [weak, strong] = augment_pair(seq, acfg, rng);
    for (long i = 0; i < seq.frames.numel(); ++i) {
        CHECK(weak.frames[i] == seq.frames[i]);
        CHECK(strong.frames[i] == seq.frames[i]);
    }
}

TEST_CASE("augment: shared geometry inverts within interpolation tolerance") {
    data::GenConfig gcfg;
    gcfg.T = 2;
    gcfg.H = 48;
    gcfg.W = 48;
    const data::VideoSequence seq = data::generate_sequence(gcfg, 45);

    AugmentConfig acfg;
    acfg.flip_prob = 1.0; // force a flip so geometry is non-trivial
    acfg.perspective_frac = 0.04;
    acfg.weak_chroma = 0.0; // geometry only on the weak branch
    acfg.strong_chroma = 0.3;
    Rng rng(2);
    AugmentRecord rec;
    const auto [weak, strong] = augment_pair(seq, acfg, rng, &rec);
    REQUIRE(!rec.geom.is_identity);

    const Tensor recovered = warp_frames(weak.frames, rec.geom.in_to_out);
    // Compare away from borders where clamp-to-edge distorts.
    real err = 0;
    long count = 0;
    for (int t = 0; t < 2; ++t)
        for (int y = 8; y < 40; ++y)
            for (int x = 8; x < 40; ++x)
                for (int c = 0; c < 3; ++c) {
                    err += std::abs(recovered.at(t, y, x, c) - seq.frames.at(t, y, x, c));
                    ++count;
                }
    CHECK(err / static_cast<real>(count) < 0.03);

    // Weak and strong share the same warp: inverting strong aligns it with
    // the chroma-jittered original up to the erased rectangle.
    bool weak_strong_differ = false;
    for (long i = 0; i < weak.frames.numel() && !weak_strong_differ; ++i)
        weak_strong_differ = weak.frames[i] != strong.frames[i];
    CHECK(weak_strong_differ);
}

TEST_CASE("augment: erased area stays within the configured fraction band") {
    data::GenConfig gcfg;
    gcfg.T = 1;
    gcfg.H = 40;
    gcfg.W = 40;
    const data::VideoSequence seq = data::generate_sequence(gcfg, 46);
    AugmentConfig acfg;
    acfg.flip_prob = 0.0;
    acfg.perspective_frac = 0.0;
    acfg.weak_chroma = 0.0;
    acfg.strong_chroma = 0.0;
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        AugmentRecord rec;
        const auto [weak, strong] = augment_pair(seq, acfg, rng, &rec);
        REQUIRE(rec.erase.active);
        const real frac = static_cast<real>(rec.erase.w) * rec.erase.h / (40.0 * 40.0);
        CHECK(frac >= 0.015); // rounding can nudge just below 0.02
        CHECK(frac <= 0.16);
        // Outside the rectangle strong equals weak; inside it differs almost
        // everywhere (noise fill).
        long diff_outside = 0;
        for (int y = 0; y < 40; ++y)
            for (int x = 0; x < 40; ++x) {
                const bool inside = x >= rec.erase.x && x < rec.erase.x + rec.erase.w &&
                                    y >= rec.erase.y && y < rec.erase.y + rec.erase.h;
                if (inside) continue;
                for (int c = 0; c < 3; ++c)
                    if (weak.frames.at(0, y, x, c) != strong.frames.at(0, y, x, c)) ++diff_outside;
            }
        CHECK(diff_outside == 0);
    }
}
