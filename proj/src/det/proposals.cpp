#include "starmt/det/proposals.hpp"

#include "starmt/core/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace starmt::det {

std::vector<Proposal> select_topk(const DenseGrid& grid, int k, const Arch& arch,
                                  int frame_h, int frame_w) {
    if (k <= 0) throw std::invalid_argument("select_topk: k must be > 0");
    const int T = grid.obj.dim(0), h = grid.obj.dim(2), w = grid.obj.dim(3);
    const int n_c = grid.cls.dim(1);
    const int cells = h * w;
    const int kk = std::min(k, cells);

    struct Scored {
        real score;
        int row, col;
    };

    std::vector<Proposal> out;
    out.reserve(static_cast<size_t>(T) * kk);
    std::vector<Scored> scored(static_cast<size_t>(cells));
    for (int t = 0; t < T; ++t) {
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                const real p = kernels::sigmoid(grid.obj.at(t, 0, r, c));
                real best = 0.0;
                for (int cc = 0; cc < n_c; ++cc)
                    best = std::max(best, kernels::sigmoid(grid.cls.at(t, cc, r, c)));
                scored[static_cast<size_t>(r) * w + c] = {p * best, r, c};
            }
        }
        // Highest score first; ties by raster order.
        std::partial_sort(scored.begin(), scored.begin() + kk, scored.end(),
                          [](const Scored& a, const Scored& b) {
                              if (a.score != b.score) return a.score > b.score;
                              if (a.row != b.row) return a.row < b.row;
                              return a.col < b.col;
                          });
        for (int i = 0; i < kk; ++i) {
            const Scored& s = scored[static_cast<size_t>(i)];
            Proposal p;
            p.frame = t;
            p.row = s.row;
            p.col = s.col;
            p.objectness = kernels::sigmoid(grid.obj.at(t, 0, s.row, s.col));
            p.feature.resize(static_cast<size_t>(grid.feat.dim(1)));
            for (int d = 0; d < grid.feat.dim(1); ++d)
                p.feature[static_cast<size_t>(d)] = grid.feat.at(t, d, s.row, s.col);
            p.scores.resize(static_cast<size_t>(n_c));
            p.cls_logits.resize(static_cast<size_t>(n_c));
            for (int cc = 0; cc < n_c; ++cc) {
                p.cls_logits[static_cast<size_t>(cc)] = grid.cls.at(t, cc, s.row, s.col);
                p.scores[static_cast<size_t>(cc)] = kernels::sigmoid(p.cls_logits[static_cast<size_t>(cc)]);
            }
            real regress[4];
            for (int d = 0; d < 4; ++d) regress[d] = grid.box.at(t, d, s.row, s.col);
            p.box = decode_box(regress, s.row, s.col, arch.stride(), frame_h, frame_w);
            out.push_back(std::move(p));
        }
    }
    return out;
}

Tensor affinity(const std::vector<Proposal>& proposals) {
    const int n = static_cast<int>(proposals.size());
    if (n < 1) throw std::invalid_argument("affinity: needs at least one proposal");
    const int d = static_cast<int>(proposals[0].feature.size());

    std::vector<real> norms(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        real s = 0.0;
        for (int j = 0; j < d; ++j) s += proposals[static_cast<size_t>(i)].feature[static_cast<size_t>(j)] *
                                         proposals[static_cast<size_t>(i)].feature[static_cast<size_t>(j)];
        norms[static_cast<size_t>(i)] = std::sqrt(s);
    }

    Tensor a({n, n});
    for (int i = 0; i < n; ++i) {
        a.at(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) {
            real v = 0.0;
            if (norms[static_cast<size_t>(i)] > 0.0 && norms[static_cast<size_t>(j)] > 0.0) {
                real dot = 0.0;
                for (int dd = 0; dd < d; ++dd)
                    dot += proposals[static_cast<size_t>(i)].feature[static_cast<size_t>(dd)] *
                           proposals[static_cast<size_t>(j)].feature[static_cast<size_t>(dd)];
                v = dot / (norms[static_cast<size_t>(i)] * norms[static_cast<size_t>(j)]);
            }
            a.at(i, j) = v;
            a.at(j, i) = v;
        }
    }
    return a;
}

Tensor temporal_aggregate(const std::vector<Proposal>& proposals, const Tensor& aff,
                          const Tensor& tam_w, const Tensor& tam_b, real temp) {
    const int n = static_cast<int>(proposals.size());
    if (aff.dim(0) != n || aff.dim(1) != n)
        throw std::invalid_argument("temporal_aggregate: affinity shape mismatch");
    const int d = static_cast<int>(proposals[0].feature.size());
    const int n_c = tam_w.dim(0);

    const Tensor weights = kernels::softmax_rows(aff, temp);

    Tensor refined({n, n_c});
    std::vector<real> mixed(static_cast<size_t>(d));
    for (int i = 0; i < n; ++i) {
        std::fill(mixed.begin(), mixed.end(), 0.0);
        for (int j = 0; j < n; ++j) {
            const real w = weights.at(i, j);
            const auto& f = proposals[static_cast<size_t>(j)].feature;
            for (int dd = 0; dd < d; ++dd) mixed[static_cast<size_t>(dd)] += w * f[static_cast<size_t>(dd)];
        }
        for (int c = 0; c < n_c; ++c) {
            real delta = tam_b[c];
            for (int dd = 0; dd < d; ++dd) delta += tam_w.at(c, dd) * mixed[static_cast<size_t>(dd)];
            // Residual on the proposal's own class logit.
            refined.at(i, c) = kernels::sigmoid(
                proposals[static_cast<size_t>(i)].cls_logits[static_cast<size_t>(c)] + delta);
        }
    }
    return refined;
}

ad::Var temporal_aggregate_ad(const ad::Var& features, const ad::Var& cls_logits,
                              const ad::Var& tam_w, const ad::Var& tam_b, real temp) {
    ad::Var unit = ad::rows_unit(features, 1e-12);
    ad::Var aff = ad::matmul_nt(unit, unit);
    ad::Var weights = ad::softmax_rows(aff, temp);
    ad::Var mixed = ad::matmul(weights, features);
    ad::Var delta = ad::linear(mixed, tam_w, tam_b);
    return ad::sigmoid(ad::add(cls_logits, delta));
}

namespace {

real box_iou(const data::Box& a, const data::Box& b) {
    const real ix = std::max(static_cast<real>(0),
                             std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const real iy = std::max(static_cast<real>(0),
                             std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const real inter = ix * iy;
    const real uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

} // namespace

std::vector<Detection> nms(std::vector<Detection> dets, real iou_thresh) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        return a.confidence > b.confidence;
    });
    std::vector<Detection> kept;
    std::vector<bool> suppressed(dets.size(), false);
    for (size_t i = 0; i < dets.size(); ++i) {
        if (suppressed[i]) continue;
        kept.push_back(dets[i]);
        for (size_t j = i + 1; j < dets.size(); ++j) {
            if (suppressed[j] || dets[j].frame != dets[i].frame) continue;
            if (box_iou(dets[i].box, dets[j].box) > iou_thresh) suppressed[j] = true;
        }
    }
    return kept;
}

SequenceInference infer_sequence(const data::VideoSequence& seq, const ModelParams& params, int k,
                                 real nms_iou, real conf_thresh) {
    SequenceInference out;
    const DenseGrid grid = backbone_forward(seq.frames, params);
    out.proposals = select_topk(grid, k, params.arch, seq.height(), seq.width());
    if (out.proposals.empty()) return out;
    const Tensor aff = affinity(out.proposals);
    out.refined_scores = temporal_aggregate(out.proposals, aff, params.find("tam.w"),
                                            params.find("tam.b"), params.arch.attn_temp());

    std::vector<Detection> dets;
    for (size_t i = 0; i < out.proposals.size(); ++i) {
        int best_c = 0;
        real best_s = out.refined_scores.at(static_cast<int>(i), 0);
        for (int c = 1; c < out.refined_scores.dim(1); ++c) {
            if (out.refined_scores.at(static_cast<int>(i), c) > best_s) {
                best_s = out.refined_scores.at(static_cast<int>(i), c);
                best_c = c;
            }
        }
        const real conf = out.proposals[i].objectness * best_s;
        if (conf < conf_thresh) continue;
        if (!out.proposals[i].box.well_formed()) continue;
        Detection d;
        d.frame = out.proposals[i].frame;
        d.class_id = best_c;
        d.confidence = conf;
        d.box = out.proposals[i].box;
        dets.push_back(d);
    }
    out.detections = nms(std::move(dets), nms_iou);
    return out;
}

std::vector<Detection> detect_sequence(const data::VideoSequence& seq, const ModelParams& params,
                                       int k, real nms_iou, real conf_thresh) {
    return infer_sequence(seq, params, k, nms_iou, conf_thresh).detections;
}

} // namespace starmt::det
