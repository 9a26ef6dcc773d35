#include "starmt/det/train.hpp"

#include "starmt/core/rng.hpp"
#include "starmt/eval/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

using nlohmann::json;

namespace starmt::det {

void Sgd::step(ModelParams& params, const BoundParams& bound, real lr) {
    for (auto& pt : params.tensors) {
        const ad::Var v = bound.find(pt.name);
        if (!v->requires_grad || v->grad.numel() != pt.t.numel()) continue;
        Tensor& vel = velocity.try_emplace(pt.name, Tensor(pt.t.shape())).first->second;
        for (long i = 0; i < pt.t.numel(); ++i) {
            vel[i] = momentum * vel[i] + v->grad[i];
            pt.t[i] -= lr * vel[i];
        }
    }
}

real cosine_lr(long iter, long total, real lr0, real lr1) {
    if (total <= 1) return lr0;
    const real phase = static_cast<real>(iter) / static_cast<real>(total - 1);
    return lr1 + 0.5 * (lr0 - lr1) * (1.0 + std::cos(3.14159265358979323846 * phase));
}

SequenceCache::SequenceCache(const data::DatasetManifest& manifest, std::string split,
                             data::LoadOptions opt)
    : root_(manifest.root), split_(std::move(split)), opt_(opt),
      ids_(manifest.split_ids(split_)) {}

const data::VideoSequence& SequenceCache::get(const std::string& id) {
    auto it = cache_.find(id);
    if (it == cache_.end())
        it = cache_.emplace(id, data::load_sequence(root_, split_, id, opt_)).first;
    return it->second;
}

namespace {

struct CellKey {
    int t, row, col;
    bool operator<(const CellKey& o) const {
        if (t != o.t) return t < o.t;
        if (row != o.row) return row < o.row;
        return col < o.col;
    }
};

} // namespace

ad::Var supervised_sequence_loss(const GridAd& grid, const std::vector<data::BoxLabel>& labels,
                                 const Arch& arch, real w_obj, real w_cls, real w_box) {
    const int T = grid.obj->val.dim(0), h = grid.obj->val.dim(2), w = grid.obj->val.dim(3);
    const int stride = arch.stride();

    // The cell containing a label's center is positive; collisions keep the
    // larger box.
    std::map<CellKey, const data::BoxLabel*> positives;
    for (const auto& l : labels) {
        const int col = std::clamp(static_cast<int>(l.box.cx() / stride), 0, w - 1);
        const int row = std::clamp(static_cast<int>(l.box.cy() / stride), 0, h - 1);
        const CellKey key{l.frame, row, col};
        auto it = positives.find(key);
        if (it == positives.end() || l.box.area() > it->second->box.area())
            positives[key] = &l;
    }

    Tensor obj_target({T, 1, h, w});
    std::vector<ad::Cell> cells;
    cells.reserve(positives.size());
    for (const auto& [key, lbl] : positives) {
        obj_target.at(key.t, 0, key.row, key.col) = 1.0;
        cells.push_back({key.t, key.row, key.col});
    }

    ad::Var loss = ad::scale(ad::bce_mean(ad::sigmoid(grid.obj), obj_target, 1e-7), w_obj);

    if (!cells.empty()) {
        const int P = static_cast<int>(cells.size());
        Tensor onehot({P, arch.n_c});
        Tensor box_target({P, 4});
        int p = 0;
        for (const auto& [key, lbl] : positives) {
            onehot.at(p, lbl->class_id) = 1.0;
            box_target.at(p, 0) = lbl->box.cx() / stride - key.col;
            box_target.at(p, 1) = lbl->box.cy() / stride - key.row;
            box_target.at(p, 2) = std::log(std::max(lbl->box.width(), static_cast<real>(1e-3)) / stride);
            box_target.at(p, 3) = std::log(std::max(lbl->box.height(), static_cast<real>(1e-3)) / stride);
            ++p;
        }
        ad::Var cls_sel = ad::sigmoid(ad::gather_cells(grid.cls, cells));
        ad::Var box_sel = ad::gather_cells(grid.box, cells);
        loss = ad::add(loss, ad::scale(ad::bce_mean(cls_sel, onehot, 1e-7), w_cls));
        loss = ad::add(loss, ad::scale(ad::l1(box_sel, ad::constant(box_target)), w_box));
    }
    return loss;
}

namespace {

std::vector<std::string> shuffled_order(const std::vector<std::string>& ids, Rng& rng) {
    std::vector<std::string> order = ids;
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_int(i)]);
    return order;
}

class JsonlLog {
public:
    explicit JsonlLog(const std::string& path) {
        if (!path.empty()) os_.open(path);
    }
    void write(const json& j) {
        if (os_.is_open()) os_ << j.dump() << "\n";
    }

private:
    std::ofstream os_;
};

} // namespace

ModelParams train_source(const data::DatasetManifest& manifest, const Arch& arch,
                         const SourceTrainHyper& hyper, uint64_t seed) {
    SequenceCache cache(manifest, "train");
    if (cache.ids().empty()) throw std::runtime_error("train_source: empty train split");

    ModelParams params = ModelParams::init(arch, derive_seed(seed, 0));
    Rng order_rng(derive_seed(seed, 1));
    Sgd opt;
    opt.momentum = hyper.momentum;
    JsonlLog log(hyper.log_path);

    std::vector<std::string> order;
    size_t cursor = 0;
    auto next_id = [&]() -> const std::string& {
        if (cursor >= order.size()) {
            order = shuffled_order(cache.ids(), order_rng);
            cursor = 0;
        }
        return order[cursor++];
    };

    for (int iter = 0; iter < hyper.backbone_iters; ++iter) {
        const data::VideoSequence& seq = cache.get(next_id());
        const BoundParams bound = bind(params, /*backbone=*/true, /*tam=*/false);
        const GridAd grid = backbone_forward_ad(seq.frames, bound, arch);
        const ad::Var loss =
            supervised_sequence_loss(grid, seq.labels, arch, hyper.w_obj, hyper.w_cls, hyper.w_box);
        ad::backward(loss);
        const real lr = cosine_lr(iter, hyper.backbone_iters, hyper.lr0, hyper.lr1);
        opt.step(params, bound, lr);
        log.write({{"phase", "backbone"}, {"iter", iter}, {"loss", loss->val[0]}, {"lr", lr}});
    }

    TamTrainHyper tam;
    tam.iters = hyper.tam_iters;
    tam.lr0 = hyper.tam_lr0;
    tam.lr1 = hyper.tam_lr1;
    tam.momentum = hyper.momentum;
    tam.k = hyper.k;
    tam.log_path = hyper.log_path.empty() ? "" : hyper.log_path + ".tam";
    train_tam_supervised(
        params, cache,
        [&cache](const std::string& id) -> const std::vector<data::BoxLabel>& {
            return cache.get(id).labels;
        },
        tam, derive_seed(seed, 2));

    params.check_finite();
    return params;
}

void train_tam_supervised(ModelParams& params, SequenceCache& cache,
                          const LabelProvider& labels, const TamTrainHyper& hyper,
                          uint64_t seed) {
    if (cache.ids().empty()) throw std::runtime_error("train_tam_supervised: empty split");
    Rng order_rng(seed);
    Sgd opt;
    opt.momentum = hyper.momentum;
    JsonlLog log(hyper.log_path);

    std::vector<std::string> order;
    size_t cursor = 0;

    for (int iter = 0; iter < hyper.iters; ++iter) {
        if (cursor >= order.size()) {
            order = shuffled_order(cache.ids(), order_rng);
            cursor = 0;
        }
        const data::VideoSequence& seq = cache.get(order[cursor++]);
        const std::vector<data::BoxLabel>& lbls = labels(seq.id);

        const DenseGrid grid = backbone_forward(seq.frames, params);
        const std::vector<Proposal> props =
            select_topk(grid, hyper.k, params.arch, seq.height(), seq.width());
        if (props.empty()) continue;

        const int P = static_cast<int>(props.size());
        const int d = params.arch.d_f(), n_c = params.arch.n_c;
        Tensor feats({P, d});
        Tensor logits({P, n_c});
        Tensor targets({P, n_c});
        for (int i = 0; i < P; ++i) {
            for (int dd = 0; dd < d; ++dd) feats.at(i, dd) = props[static_cast<size_t>(i)].feature[static_cast<size_t>(dd)];
            for (int c = 0; c < n_c; ++c)
                logits.at(i, c) = props[static_cast<size_t>(i)].cls_logits[static_cast<size_t>(c)];
            real best_iou = 0.0;
            int best_cls = -1;
            for (const auto& l : lbls) {
                if (l.frame != props[static_cast<size_t>(i)].frame) continue;
                const real v = eval::iou(props[static_cast<size_t>(i)].box, l.box);
                if (v > best_iou) {
                    best_iou = v;
                    best_cls = l.class_id;
                }
            }
            if (best_cls >= 0 && best_iou >= hyper.match_iou) targets.at(i, best_cls) = 1.0;
        }

        const BoundParams bound = bind(params, /*backbone=*/false, /*tam=*/true);
        const ad::Var refined =
            temporal_aggregate_ad(ad::constant(feats), ad::constant(logits),
                                  bound.find("tam.w"), bound.find("tam.b"), params.arch.attn_temp());
        const ad::Var loss = ad::bce_mean(refined, targets, 1e-7);
        ad::backward(loss);
        const real lr = cosine_lr(iter, hyper.iters, hyper.lr0, hyper.lr1);
        opt.step(params, bound, lr);
        log.write({{"phase", "tam"}, {"iter", iter}, {"loss", loss->val[0]}, {"lr", lr}});
    }
}

} // namespace starmt::det
