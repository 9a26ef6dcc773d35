#include "starmt/eval/evaluate.hpp"

#include "starmt/core/parallel.hpp"
#include "starmt/data/dataset.hpp"
#include "starmt/sfda/entropy.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <fstream>
#include <stdexcept>

using nlohmann::json;

namespace starmt::eval {

MetricsRecord evaluate_model(const det::ModelParams& params, const data::DatasetManifest& manifest,
                             const std::string& split, const EvalOptions& opt,
                             const std::string& model_id, const std::string& dataset_id) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<std::string>& ids = manifest.split_ids(split);
    if (ids.empty()) throw std::runtime_error("evaluate_model: empty split " + split);

    struct PerSeq {
        std::vector<EvalDetection> dets;
        std::vector<EvalGroundTruth> gts;
        std::vector<real> scores; // flattened refined scores
        long n_scores_cols = 0;
    };
    std::vector<PerSeq> results(ids.size());

    // Independent per sequence; reduction below runs in id order so the
    // record is identical for any worker count.
    parallel_for(static_cast<long>(ids.size()), [&](long i) {
        const std::string& id = ids[static_cast<size_t>(i)];
        const data::VideoSequence seq = data::load_sequence(manifest.root, split, id);
        const det::SequenceInference inf =
            det::infer_sequence(seq, params, opt.k, opt.nms_iou, opt.conf_thresh);
        PerSeq& r = results[static_cast<size_t>(i)];
        for (const auto& d : inf.detections)
            r.dets.push_back({id, d.frame, d.class_id, d.confidence, d.box, 0});
        for (const auto& l : seq.labels) r.gts.push_back({id, l.frame, l.class_id, l.box});
        if (inf.refined_scores.numel() > 0) {
            r.scores.assign(inf.refined_scores.data(),
                            inf.refined_scores.data() + inf.refined_scores.numel());
            r.n_scores_cols = inf.refined_scores.dim(1);
        }
    });

    std::vector<EvalDetection> dets;
    std::vector<EvalGroundTruth> gts;
    std::vector<real> all_scores;
    for (auto& r : results) {
        for (auto& d : r.dets) {
            d.det_index = static_cast<long>(dets.size());
            dets.push_back(d);
        }
        gts.insert(gts.end(), r.gts.begin(), r.gts.end());
        all_scores.insert(all_scores.end(), r.scores.begin(), r.scores.end());
    }

    MetricsRecord rec;
    rec.model_id = model_id;
    rec.dataset_id = dataset_id;
    rec.split = split;
    rec.train_split = split == "train";
    const ApResult ap = ap50(dets, gts, 0.5);
    rec.per_class_ap50 = ap.per_class;
    rec.mean_ap50 = ap.mean_ap;
    rec.n_detections = static_cast<long>(dets.size());
    rec.n_ground_truth = static_cast<long>(gts.size());
    if (!all_scores.empty()) {
        const int n_scores = static_cast<int>(all_scores.size());
        Tensor pooled({n_scores}, std::move(all_scores));
        rec.mean_self_entropy = sfda::mean_self_entropy(pooled);
    }
    rec.wall_clock_sec =
        std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

void save_record(const MetricsRecord& rec, const std::string& path) {
    json per_class;
    for (const auto& [c, v] : rec.per_class_ap50) per_class[std::to_string(c)] = v;
    json j;
    j["metrics"] = {{"model_id", rec.model_id},
                    {"dataset_id", rec.dataset_id},
                    {"split", rec.split},
                    {"train_split", rec.train_split},
                    {"per_class_ap50", per_class},
                    {"mean_ap50", rec.mean_ap50},
                    {"mean_self_entropy", rec.mean_self_entropy},
                    {"n_detections", rec.n_detections},
                    {"n_ground_truth", rec.n_ground_truth}};
    j["timing"] = {{"wall_clock_sec", rec.wall_clock_sec}};
    std::ofstream os(path);
    os << j.dump(2) << "\n";
    if (!os) throw std::runtime_error("save_record: failed writing " + path);
}

MetricsRecord load_record(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_record: missing " + path);
    json j = json::parse(is);
    const json& m = j.at("metrics");
    MetricsRecord rec;
    rec.model_id = m.at("model_id").get<std::string>();
    rec.dataset_id = m.at("dataset_id").get<std::string>();
    rec.split = m.at("split").get<std::string>();
    rec.train_split = m.at("train_split").get<bool>();
    for (const auto& [k, v] : m.at("per_class_ap50").items())
        rec.per_class_ap50[std::stoi(k)] = v.get<real>();
    rec.mean_ap50 = m.at("mean_ap50").get<real>();
    rec.mean_self_entropy = m.at("mean_self_entropy").get<real>();
    rec.n_detections = m.at("n_detections").get<long>();
    rec.n_ground_truth = m.at("n_ground_truth").get<long>();
    rec.wall_clock_sec = j.at("timing").at("wall_clock_sec").get<real>();
    return rec;
}

} // namespace starmt::eval
