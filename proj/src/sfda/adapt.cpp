#include "starmt/sfda/adapt.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;
using nlohmann::json;

namespace starmt::sfda {

TeacherStudent TeacherStudent::from_source(const det::ModelParams& source, real alpha) {
    if (alpha <= 0.0 || alpha >= 1.0)
        throw std::invalid_argument("TeacherStudent: alpha must be in (0,1)");
    TeacherStudent ts;
    ts.teacher = source;
    ts.student = source; // both initialized identically
    ts.alpha = alpha;
    ts.iteration = 0;
    return ts;
}

void ema_update(TeacherStudent& ts, EmaScope scope) {
    if (ts.teacher.arch.fingerprint() != ts.student.arch.fingerprint())
        throw std::invalid_argument("ema_update: architecture mismatch");
    const real a = ts.alpha;
    for (size_t i = 0; i < ts.teacher.tensors.size(); ++i) {
        det::ParamTensor& t = ts.teacher.tensors[i];
        const det::ParamTensor& s = ts.student.tensors[i];
        if (scope == EmaScope::BackboneOnly && t.scope != det::Scope::Backbone) continue;
        for (long j = 0; j < t.t.numel(); ++j) t.t[j] = a * t.t[j] + (1.0 - a) * s.t[j];
    }
    ++ts.iteration;
}

void AdaptationConfig::validate(bool alternating) const {
    if (alpha <= 0.0 || alpha >= 1.0) throw std::invalid_argument("adapt: alpha must be in (0,1)");
    if (gamma < 0.0) throw std::invalid_argument("adapt: gamma must be >= 0");
    if (tau < 1) throw std::invalid_argument("adapt: tau must be >= 1");
    if (total_iters < 0) throw std::invalid_argument("adapt: total_iters must be >= 0");
    if (alternating && total_iters > 0 && 2L * tau > total_iters)
        throw std::invalid_argument("adapt: need 2*tau <= total_iters");
    if (mask_max_percent < 0 || mask_max_percent > 75)
        throw std::invalid_argument("adapt: mask range must lie in [0, 75]");
    if (entropy_window < 1) throw std::invalid_argument("adapt: entropy_window must be >= 1");
    if (k < 1) throw std::invalid_argument("adapt: k must be >= 1");
    if (frames_per_sequence < 1)
        throw std::invalid_argument("adapt: frames_per_sequence must be >= 1");
    if (!losses.use_bce && !losses.use_cls)
        throw std::invalid_argument("adapt: at least one pseudo-label loss must stay enabled");
}

namespace {

data::VideoSequence frame_window(const data::VideoSequence& seq, int frames, Rng& rng) {
    const int T = seq.t_len();
    if (T <= frames) return seq;
    const int start = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(T - frames + 1)));
    data::VideoSequence out = seq;
    out.frames = Tensor({frames, seq.height(), seq.width(), 3});
    const long plane = static_cast<long>(seq.height()) * seq.width() * 3;
    std::copy(seq.frames.data() + start * plane, seq.frames.data() + (start + frames) * plane,
              out.frames.data());
    out.depth = Tensor();
    out.has_depth = false;
    out.labels.clear();
    return out;
}

Tensor stack_frames(const Tensor& frames, const std::vector<int>& retained) {
    const int H = frames.dim(1), W = frames.dim(2);
    Tensor out({static_cast<int>(retained.size()), H, W, 3});
    const long plane = static_cast<long>(H) * W * 3;
    for (size_t i = 0; i < retained.size(); ++i)
        std::copy(frames.data() + retained[i] * plane, frames.data() + (retained[i] + 1) * plane,
                  out.data() + static_cast<long>(i) * plane);
    return out;
}

struct MetricsLog {
    explicit MetricsLog(const std::string& path) {
        if (!path.empty()) {
            fs::create_directories(fs::path(path).parent_path().empty()
                                       ? "."
                                       : fs::path(path).parent_path().string());
            os.open(path);
        }
    }
    void write(const json& j) {
        if (os.is_open()) os << j.dump() << "\n";
    }
    std::ofstream os;
};

AdaptResult run_mean_teacher(const det::ModelParams& source, const data::DatasetManifest& target,
                             const AdaptationConfig& cfg, bool alternating) {
    cfg.validate(alternating);

    AdaptResult result;
    result.trace.window = cfg.entropy_window;
    if (cfg.total_iters == 0) {
        result.best = source;
        return result;
    }

    // Target sequences load label-blind: the adaptation loop never sees
    // labels.json on this split.
    det::SequenceCache cache(target, "train",
                             data::LoadOptions{/*with_labels=*/false, /*with_depth=*/false});
    if (cache.ids().empty()) throw std::runtime_error("adapt: empty target train split");

    TeacherStudent ts = TeacherStudent::from_source(source, cfg.alpha);
    det::Sgd opt;
    opt.momentum = cfg.momentum;
    MetricsLog log(cfg.metrics_path);
    if (!cfg.snapshot_dir.empty()) fs::create_directories(cfg.snapshot_dir);

    Rng order_rng(derive_seed(cfg.seed, 11));
    Rng augment_rng(derive_seed(cfg.seed, 12));
    Rng mask_rng(derive_seed(cfg.seed, 13));
    Rng window_rng(derive_seed(cfg.seed, 14));

    std::vector<std::string> order;
    size_t cursor = 0;
    auto next_id = [&]() -> const std::string& {
        if (cursor >= order.size()) {
            order = cache.ids();
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[order_rng.uniform_int(i)]);
            cursor = 0;
        }
        return order[cursor++];
    };

    real smooth_acc = 0.0;
    std::vector<real> recent;

    auto snapshot_teacher = [&](long iter) {
        result.snapshots.push_back({iter, ts.teacher});
        if (!cfg.snapshot_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof(name), "teacher_%06ld.ckpt", iter);
            det::save_checkpoint(ts.teacher, (fs::path(cfg.snapshot_dir) / name).string(),
                                 {{"iteration", std::to_string(iter)}});
        }
    };

    for (long t = 0; t < cfg.total_iters; ++t) {
        const Stage raw_stage = alternating ? stage_of(t, cfg.tau) : Stage::TRS;
        const Stage stage =
            (alternating && !cfg.trs_first)
                ? (raw_stage == Stage::TRS ? Stage::SRS : Stage::TRS)
                : raw_stage;

        const data::VideoSequence& full_seq = cache.get(next_id());
        const data::VideoSequence seq = frame_window(full_seq, cfg.frames_per_sequence, window_rng);
        auto [weak, strong] = augment_pair(seq, cfg.augment, augment_rng);

        const TeacherPass teacher = teacher_forward(weak, ts.teacher, cfg.k);
        const real h_raw = mean_self_entropy(teacher.agg_scores);
        result.trace.push(t, h_raw);
        recent.push_back(h_raw);
        smooth_acc += h_raw;
        if (recent.size() > static_cast<size_t>(cfg.entropy_window)) {
            smooth_acc -= recent[recent.size() - 1 - cfg.entropy_window];
        }
        const real h_smoothed =
            smooth_acc / std::min<real>(static_cast<real>(recent.size()),
                                        static_cast<real>(cfg.entropy_window));

        const real lr = det::cosine_lr(t, cfg.total_iters, cfg.lr0, cfg.lr1);
        LossTerms terms;
        real r_mask = 0.0;

        if (stage == Stage::TRS) {
            r_mask = mask_rng.uniform(0.0, cfg.mask_max_percent);
            const std::vector<int> retained = mask_frames(seq.t_len(), r_mask, mask_rng);
            const Tensor student_frames = stack_frames(strong.frames, retained);
            const det::BoundParams bound = det::bind(ts.student, true, true);
            const det::GridAd grid =
                det::backbone_forward_ad(student_frames, bound, ts.student.arch);
            terms = trs_loss(teacher, grid, retained, bound, ts.student.arch, cfg.losses);
            ad::backward(terms.total);
            opt.step(ts.student, bound, lr);
            ema_update(ts, EmaScope::All);
        } else {
            const det::BoundParams bound = det::bind(ts.student, true, true);
            const det::GridAd grid = det::backbone_forward_ad(strong.frames, bound, ts.student.arch);
            terms = srs_loss(teacher, grid, bound, cfg.gamma, ts.student.arch, cfg.losses);
            ad::backward(terms.total);
            opt.step(ts.student, bound, lr);
            ema_update(ts, EmaScope::BackboneOnly);
        }

        if ((t + 1) % cfg.entropy_window == 0) snapshot_teacher(t);

        log.write({{"iter", t},
                   {"stage", stage_name(stage)},
                   {"loss_total", terms.total->val[0]},
                   {"loss_mse", terms.mse},
                   {"loss_bce", terms.bce},
                   {"loss_cls", terms.cls},
                   {"H_raw", h_raw},
                   {"H_smoothed", h_smoothed},
                   {"lr", lr},
                   {"r_mask", r_mask}});
        if (terms.bce_skipped)
            log.write({{"iter", t}, {"warning", "bce term skipped: no teacher cells visible"}});
    }

    if (result.snapshots.empty() || result.snapshots.back().iteration != cfg.total_iters - 1)
        snapshot_teacher(cfg.total_iters - 1);

    const long selected = select_checkpoint(result.trace, cfg.selection);
    // Snap to the nearest stored teacher; earlier snapshot wins ties.
    const Snapshot* best = &result.snapshots.front();
    for (const Snapshot& s : result.snapshots) {
        if (std::llabs(s.iteration - selected) < std::llabs(best->iteration - selected))
            best = &s;
    }
    result.selected_iteration = best->iteration;
    result.best = best->teacher;
    return result;
}

} // namespace

AdaptResult adapt(const det::ModelParams& source, const data::DatasetManifest& target,
                  const AdaptationConfig& cfg) {
    return run_mean_teacher(source, target, cfg, /*alternating=*/true);
}

AdaptResult baseline_basic_mt(const det::ModelParams& source, const data::DatasetManifest& target,
                              const AdaptationConfig& cfg) {
    return run_mean_teacher(source, target, cfg, /*alternating=*/false);
}

AdaptResult baseline_pseudo_label(const det::ModelParams& source,
                                  const data::DatasetManifest& target,
                                  const PseudoLabelConfig& cfg) {
    det::SequenceCache cache(target, "train",
                             data::LoadOptions{/*with_labels=*/false, /*with_depth=*/false});
    if (cache.ids().empty()) throw std::runtime_error("baseline_pseudo_label: empty train split");

    // One labeling pass with the frozen source model: keep every top-k
    // proposal whose confidence clears the threshold. No NMS here; the
    // threshold is the filter.
    std::map<std::string, std::vector<data::BoxLabel>> pseudo;
    long total_labels = 0;
    for (const std::string& id : cache.ids()) {
        const data::VideoSequence& seq = cache.get(id);
        const TeacherPass pass = teacher_forward(seq, source, cfg.k);
        std::vector<data::BoxLabel>& labels = pseudo[id];
        for (size_t i = 0; i < pass.proposals.size(); ++i) {
            const det::Proposal& p = pass.proposals[i];
            real best_s = 0.0;
            int best_c = 0;
            for (int c = 0; c < pass.agg_scores.dim(1); ++c) {
                if (pass.agg_scores.at(static_cast<int>(i), c) > best_s) {
                    best_s = pass.agg_scores.at(static_cast<int>(i), c);
                    best_c = c;
                }
            }
            if (p.objectness * best_s < cfg.threshold) continue;
            if (!p.box.well_formed()) continue;
            data::BoxLabel l;
            l.frame = p.frame;
            l.class_id = best_c;
            l.box = p.box;
            l.track_id = static_cast<int>(labels.size());
            labels.push_back(l);
            ++total_labels;
        }
    }
    if (total_labels == 0)
        throw std::runtime_error(
            "baseline_pseudo_label: no proposal cleared the confidence threshold " +
            std::to_string(cfg.threshold) + "; nothing to train on");

    // TAM-only training against the pseudo labels, tracking self-entropy for
    // checkpoint selection.
    AdaptResult result;
    result.trace.window = cfg.entropy_window;
    det::ModelParams params = source;
    det::Sgd opt;
    opt.momentum = cfg.momentum;
    MetricsLog log(cfg.metrics_path);
    Rng order_rng(derive_seed(cfg.seed, 21));

    std::vector<std::string> order;
    size_t cursor = 0;

    for (int iter = 0; iter < cfg.iters; ++iter) {
        if (cursor >= order.size()) {
            order = cache.ids();
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[order_rng.uniform_int(i)]);
            cursor = 0;
        }
        const data::VideoSequence& seq = cache.get(order[cursor++]);
        const std::vector<data::BoxLabel>& labels = pseudo[seq.id];

        const TeacherPass pass = teacher_forward(seq, params, cfg.k);
        result.trace.push(iter, mean_self_entropy(pass.agg_scores));

        const int P = static_cast<int>(pass.proposals.size());
        const int d = params.arch.d_f(), n_c = params.arch.n_c;
        Tensor feats({P, d});
        Tensor logits({P, n_c});
        Tensor targets({P, n_c});
        for (int i = 0; i < P; ++i) {
            const det::Proposal& p = pass.proposals[static_cast<size_t>(i)];
            for (int dd = 0; dd < d; ++dd) feats.at(i, dd) = p.feature[static_cast<size_t>(dd)];
            for (int c = 0; c < n_c; ++c) logits.at(i, c) = p.cls_logits[static_cast<size_t>(c)];
            real best_iou = 0.0;
            int best_cls = -1;
            for (const auto& l : labels) {
                if (l.frame != p.frame) continue;
                const real ix = std::max(static_cast<real>(0),
                                         std::min(p.box.x2, l.box.x2) - std::max(p.box.x1, l.box.x1));
                const real iy = std::max(static_cast<real>(0),
                                         std::min(p.box.y2, l.box.y2) - std::max(p.box.y1, l.box.y1));
                const real inter = ix * iy;
                const real uni = p.box.area() + l.box.area() - inter;
                const real v = uni > 0 ? inter / uni : 0.0;
                if (v > best_iou) {
                    best_iou = v;
                    best_cls = l.class_id;
                }
            }
            if (best_cls >= 0 && best_iou >= cfg.match_iou) targets.at(i, best_cls) = 1.0;
        }

        const det::BoundParams bound = det::bind(params, /*backbone=*/false, /*tam=*/true);
        const ad::Var refined = det::temporal_aggregate_ad(
            ad::constant(feats), ad::constant(logits), bound.find("tam.w"), bound.find("tam.b"),
            params.arch.attn_temp());
        const ad::Var loss = ad::bce_mean(refined, targets, 1e-7);
        ad::backward(loss);
        const real lr = det::cosine_lr(iter, cfg.iters, cfg.lr0, cfg.lr1);
        opt.step(params, bound, lr);

        if ((iter + 1) % cfg.entropy_window == 0 || iter + 1 == cfg.iters)
            result.snapshots.push_back({iter, params});
        log.write({{"iter", iter}, {"stage", "pl"}, {"loss_total", loss->val[0]}, {"lr", lr}});
    }

    const long selected = select_checkpoint(result.trace, cfg.selection);
    const Snapshot* best = &result.snapshots.front();
    for (const Snapshot& s : result.snapshots)
        if (std::llabs(s.iteration - selected) < std::llabs(best->iteration - selected)) best = &s;
    result.selected_iteration = best->iteration;
    result.best = best->teacher;
    return result;
}

det::ModelParams oracle_finetune(const det::ModelParams& source,
                                 const data::DatasetManifest& labeled_target,
                                 const OracleConfig& cfg) {
    det::SequenceCache cache(labeled_target, "train");
    if (cache.ids().empty()) throw std::runtime_error("oracle_finetune: empty train split");
    long n_labels = 0;
    for (const std::string& id : cache.ids()) n_labels += static_cast<long>(cache.get(id).labels.size());
    if (n_labels == 0) throw std::runtime_error("oracle_finetune: target split has no labels");

    det::ModelParams params = source;
    det::train_tam_supervised(
        params, cache,
        [&cache](const std::string& id) -> const std::vector<data::BoxLabel>& {
            return cache.get(id).labels;
        },
        cfg.tam, cfg.seed);
    return params;
}

} // namespace starmt::sfda
