#pragma once

#include "starmt/data/dataset.hpp"
#include "starmt/det/proposals.hpp"

#include <functional>
#include <map>
#include <string>

namespace starmt::det {

// SGD with momentum over whichever bound tensors carry gradients.
struct Sgd {
    real momentum = 0.9;
    std::map<std::string, Tensor> velocity;

    void step(ModelParams& params, const BoundParams& bound, real lr);
};

real cosine_lr(long iter, long total, real lr0, real lr1);

// In-memory cache over one split of a dataset.
class SequenceCache {
public:
    SequenceCache(const data::DatasetManifest& manifest, std::string split,
                  data::LoadOptions opt = {});

    const data::VideoSequence& get(const std::string& id);
    const std::vector<std::string>& ids() const { return ids_; }

private:
    std::string root_;
    std::string split_;
    data::LoadOptions opt_;
    std::vector<std::string> ids_;
    std::map<std::string, data::VideoSequence> cache_;
};

struct SourceTrainHyper {
    int backbone_iters = 2500;
    int tam_iters = 600;
    real lr0 = 3e-3;
    real lr1 = 3e-4;
    real tam_lr0 = 5e-3;
    real tam_lr1 = 5e-4;
    real momentum = 0.9;
    real w_obj = 1.0;
    real w_cls = 1.0;
    real w_box = 5.0;
    int k = 30;
    std::string log_path; // JSONL loss curve; empty disables
};

// Supervised detection loss over one sequence: BCE objectness over the full
// grid, BCE one-hot class and L1 box regressands at cells holding a label
// center. Returns the weighted sum; terms without positives are skipped.
ad::Var supervised_sequence_loss(const GridAd& grid, const std::vector<data::BoxLabel>& labels,
                                 const Arch& arch, real w_obj, real w_cls, real w_box);

// Two-phase source training: the single-frame backbone first, then the
// temporal aggregation module with the backbone frozen.
ModelParams train_source(const data::DatasetManifest& manifest, const Arch& arch,
                         const SourceTrainHyper& hyper, uint64_t seed);

using LabelProvider =
    std::function<const std::vector<data::BoxLabel>&(const std::string& seq_id)>;

struct TamTrainHyper {
    int iters = 600;
    real lr0 = 5e-3;
    real lr1 = 5e-4;
    real momentum = 0.9;
    int k = 30;
    real match_iou = 0.5;
    std::string log_path;
};

// Trains only tam-scoped tensors against per-sequence box labels (ground
// truth or pseudo). Proposals matching a label at IoU >= match_iou get its
// one-hot class target, the rest all-zeros. Backbone tensors are untouched.
void train_tam_supervised(ModelParams& params, SequenceCache& cache,
                          const LabelProvider& labels, const TamTrainHyper& hyper,
                          uint64_t seed);

} // namespace starmt::det
