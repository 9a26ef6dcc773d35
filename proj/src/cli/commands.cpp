#include "starmt/cli/commands.hpp"

#include "starmt/data/datagen.hpp"
#include "starmt/degrade/degrade.hpp"
#include "starmt/det/checkpoint.hpp"
#include "starmt/det/train.hpp"
#include "starmt/eval/report.hpp"
#include "starmt/sfda/adapt.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace starmt::cli {

namespace {

std::string resolve(const std::string& out_dir, const std::string& p) {
    fs::path path(p);
    if (path.is_absolute()) return p;
    return (fs::path(out_dir) / path).string();
}

uint64_t master_seed(const CommandArgs& args) {
    if (args.seed_override) return *args.seed_override;
    return args.config.value("master_seed", static_cast<uint64_t>(0));
}

void check_global_keys(const json& cfg) {
    check_keys(cfg, "config",
               {"out", "master_seed", "datagen", "degrade", "train_source", "adapt", "eval",
                "report"});
}

void check_device(const CommandArgs& args) {
    if (args.device != "cpu")
        throw SchemaError("device '" + args.device + "' is not available in this build (cpu only)");
}

std::string run_record_path(const std::string& out_dir, const std::string& command,
                            const std::string& hash) {
    return (fs::path(out_dir) / "runs" / (command + "_" + hash.substr(0, 12) + ".run.json"))
        .string();
}

// Idempotency gate: identical config whose outputs are all present is a
// no-op; anything else on top of existing outputs needs --force.
bool up_to_date(const std::string& run_path, const std::vector<std::string>& outputs,
                const CommandArgs& args) {
    if (args.force) return false;
    if (!fs::exists(run_path)) return false;
    for (const auto& o : outputs)
        if (!fs::exists(o)) return false;
    return true;
}

void guard_outputs(const std::vector<std::string>& outputs, const CommandArgs& args,
                   const std::string& command) {
    if (args.force) return;
    for (const auto& o : outputs) {
        if (fs::exists(o))
            throw std::runtime_error(command + ": output exists: " + o +
                                     " (identical re-runs are no-ops; pass --force to overwrite)");
    }
}

void require_input(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw MissingArtifactError("missing " + what + ": " + path);
}

json resolved_config(const CommandArgs& args, const std::string& command,
                     const std::string& block_name, const json& block, uint64_t seed) {
    json r;
    r["command"] = command;
    r["out"] = args.out_dir;
    r["master_seed"] = seed;
    r[block_name] = block;
    return r;
}

void finish_run(const CommandArgs& args, const std::string& command, const json& resolved,
                const std::map<std::string, std::string>& inputs,
                const std::vector<std::string>& outputs) {
    RunRecord rec;
    rec.command = command;
    rec.resolved_config = resolved;
    rec.config_hash = config_hash(resolved);
    rec.input_hashes = inputs;
    rec.outputs = outputs;
    write_run_record(rec, run_record_path(args.out_dir, command, rec.config_hash));
}

det::Arch arch_from_json(const json& block, int n_c) {
    det::Arch arch;
    arch.n_c = n_c;
    if (block.contains("widths")) {
        const auto w = block.at("widths").get<std::vector<int>>();
        if (w.size() != 4) throw SchemaError("widths must list 4 stage widths");
        std::copy(w.begin(), w.end(), arch.widths.begin());
    }
    return arch;
}

} // namespace

void cmd_gen_data(const CommandArgs& args) {
    check_device(args);
    check_global_keys(args.config);
    const json& block = require_block(args.config, "datagen");
    check_keys(block, "datagen",
               {"root", "T", "H", "W", "n_c", "grid_stride", "min_objects", "max_objects",
                "min_size", "max_size", "max_speed", "jitter_sigma", "n_sequences",
                "split_ratios", "visibility_min"});

    data::GenConfig gc;
    gc.T = block.value("T", gc.T);
    gc.H = block.value("H", gc.H);
    gc.W = block.value("W", gc.W);
    gc.n_c = block.value("n_c", gc.n_c);
    gc.grid_stride = block.value("grid_stride", gc.grid_stride);
    gc.min_objects = block.value("min_objects", gc.min_objects);
    gc.max_objects = block.value("max_objects", gc.max_objects);
    gc.min_size = block.value("min_size", gc.min_size);
    gc.max_size = block.value("max_size", gc.max_size);
    gc.max_speed = block.value("max_speed", gc.max_speed);
    gc.jitter_sigma = block.value("jitter_sigma", gc.jitter_sigma);
    gc.visibility_min = block.value("visibility_min", gc.visibility_min);
    try {
        gc.validate();
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("datagen: ") + e.what());
    }

    data::BuildOptions opt;
    opt.n_sequences = block.value("n_sequences", opt.n_sequences);
    if (block.contains("split_ratios")) {
        const auto r = block.at("split_ratios").get<std::vector<real>>();
        if (r.size() != 3) throw SchemaError("split_ratios must list 3 values");
        std::copy(r.begin(), r.end(), opt.split_ratios.begin());
    }
    opt.force = args.force;

    const uint64_t seed = master_seed(args);
    const std::string root = resolve(args.out_dir, block.value("root", std::string("data/clean")));
    const json resolved = resolved_config(args, "gen-data", "datagen", block, master_seed(args));
    const std::string run_path = run_record_path(args.out_dir, "gen-data", config_hash(resolved));
    if (up_to_date(run_path, {root + "/manifest.json"}, args)) {
        std::cout << "gen-data: up to date at " << root << "\n";
        return;
    }

    data::build_dataset(gc, opt, root, seed);
    finish_run(args, "gen-data", resolved, {}, {root + "/manifest.json"});
    std::cout << "gen-data: wrote dataset at " << root << "\n";
}

void cmd_degrade(const CommandArgs& args) {
    check_device(args);
    check_global_keys(args.config);
    const json& block = require_block(args.config, "degrade");
    check_keys(block, "degrade",
               {"kind", "source_root", "root", "noise_sigma_min", "noise_sigma_max",
                "haze_beta_min", "haze_beta_max", "turb_strength_min", "turb_strength_max",
                "turb_temporal_corr"});

    const std::string kind_str = block.value("kind", std::string("noise"));
    degrade::Kind kind;
    try {
        kind = degrade::kind_from_name(kind_str);
    } catch (const std::invalid_argument& e) {
        throw SchemaError(e.what());
    }

    degrade::DegradeOptions opt;
    opt.force = args.force;
    opt.ranges.noise_sigma_min = block.value("noise_sigma_min", opt.ranges.noise_sigma_min);
    opt.ranges.noise_sigma_max = block.value("noise_sigma_max", opt.ranges.noise_sigma_max);
    opt.ranges.haze_beta_min = block.value("haze_beta_min", opt.ranges.haze_beta_min);
    opt.ranges.haze_beta_max = block.value("haze_beta_max", opt.ranges.haze_beta_max);
    opt.ranges.turb_strength_min = block.value("turb_strength_min", opt.ranges.turb_strength_min);
    opt.ranges.turb_strength_max = block.value("turb_strength_max", opt.ranges.turb_strength_max);
    opt.ranges.turb_temporal_corr = block.value("turb_temporal_corr", opt.ranges.turb_temporal_corr);

    const std::string src = resolve(args.out_dir, block.value("source_root", std::string("data/clean")));
    const std::string dst =
        resolve(args.out_dir, block.value("root", std::string("data/") + kind_str));
    require_input(src + "/manifest.json", "source dataset manifest");

    const uint64_t seed = derive_seed(master_seed(args), 0xD16);
    const json resolved = resolved_config(args, "degrade", "degrade", block, master_seed(args));
    const std::string run_path = run_record_path(args.out_dir, "degrade", config_hash(resolved));
    if (up_to_date(run_path, {dst + "/manifest.json"}, args)) {
        std::cout << "degrade: up to date at " << dst << "\n";
        return;
    }

    const data::DatasetManifest manifest = data::load_manifest(src);
    degrade::degrade_dataset(manifest, kind, seed, dst, opt);
    finish_run(args, "degrade", resolved, {{src, hash_path(src + "/manifest.json")}},
               {dst + "/manifest.json"});
    std::cout << "degrade: wrote " << kind_str << " dataset at " << dst << "\n";
}

void cmd_train_source(const CommandArgs& args) {
    check_device(args);
    check_global_keys(args.config);
    const json& block = require_block(args.config, "train_source");
    check_keys(block, "train_source",
               {"dataset_root", "checkpoint", "widths", "backbone_iters", "tam_iters", "lr0",
                "lr1", "tam_lr0", "tam_lr1", "momentum", "w_obj", "w_cls", "w_box", "k", "log"});

    const std::string root =
        resolve(args.out_dir, block.value("dataset_root", std::string("data/clean")));
    const std::string ckpt =
        resolve(args.out_dir, block.value("checkpoint", std::string("models/source.ckpt")));
    require_input(root + "/manifest.json", "source dataset manifest");

    det::SourceTrainHyper hyper;
    hyper.backbone_iters = block.value("backbone_iters", hyper.backbone_iters);
    hyper.tam_iters = block.value("tam_iters", hyper.tam_iters);
    hyper.lr0 = block.value("lr0", hyper.lr0);
    hyper.lr1 = block.value("lr1", hyper.lr1);
    hyper.tam_lr0 = block.value("tam_lr0", hyper.tam_lr0);
    hyper.tam_lr1 = block.value("tam_lr1", hyper.tam_lr1);
    hyper.momentum = block.value("momentum", hyper.momentum);
    hyper.w_obj = block.value("w_obj", hyper.w_obj);
    hyper.w_cls = block.value("w_cls", hyper.w_cls);
    hyper.w_box = block.value("w_box", hyper.w_box);
    hyper.k = block.value("k", hyper.k);
    if (block.contains("log")) hyper.log_path = resolve(args.out_dir, block.at("log"));

    const uint64_t seed = derive_seed(master_seed(args), 0x7124);
    const json resolved = resolved_config(args, "train-source", "train_source", block, master_seed(args));
    const std::string run_path =
        run_record_path(args.out_dir, "train-source", config_hash(resolved));
    if (up_to_date(run_path, {ckpt}, args)) {
        std::cout << "train-source: up to date at " << ckpt << "\n";
        return;
    }
    guard_outputs({ckpt}, args, "train-source");

    const data::DatasetManifest manifest = data::load_manifest(root);
    const det::Arch arch = arch_from_json(block, manifest.n_c);
    const det::ModelParams params = det::train_source(manifest, arch, hyper, seed);
    fs::create_directories(fs::path(ckpt).parent_path());
    det::save_checkpoint(params, ckpt, {{"trained_on", root}, {"seed", std::to_string(seed)}});
    finish_run(args, "train-source", resolved, {{root, hash_path(root + "/manifest.json")}},
               {ckpt});
    std::cout << "train-source: wrote " << ckpt << "\n";
}

void cmd_adapt(const CommandArgs& args) {
    check_device(args);
    check_global_keys(args.config);
    json block = require_block(args.config, "adapt");
    check_keys(block, "adapt",
               {"method", "source_checkpoint", "dataset_root", "output_checkpoint", "alpha",
                "gamma", "tau", "total_iters", "k", "mask_max_percent", "lr0", "lr1", "momentum",
                "frames_per_sequence", "entropy_window", "stage_order", "loss_mse", "loss_bce",
                "loss_cls", "seed", "metrics_log", "snapshot_dir", "trace", "selection", "pl_threshold",
                "pl_iters", "pl_lr0", "pl_lr1", "oracle_iters", "oracle_lr0", "oracle_lr1",
                "match_iou"});
    if (!args.method_override.empty()) block["method"] = args.method_override;
    const std::string method = block.value("method", std::string("star_mt"));
    if (method != "star_mt" && method != "basic_mt" && method != "pseudo_label" &&
        method != "oracle")
        throw SchemaError("adapt.method must be one of star_mt|basic_mt|pseudo_label|oracle, got '" +
                          method + "'");

    const std::string src_ckpt =
        resolve(args.out_dir, block.value("source_checkpoint", std::string("models/source.ckpt")));
    const std::string root = resolve(args.out_dir, block.value("dataset_root", std::string("data/noise")));
    const std::string out_ckpt = resolve(
        args.out_dir, block.value("output_checkpoint", std::string("models/") + method + ".ckpt"));
    require_input(src_ckpt, "source checkpoint");
    require_input(root + "/manifest.json", "target dataset manifest");

    const uint64_t seed = block.contains("seed") ? block.at("seed").get<uint64_t>()
                                                 : derive_seed(master_seed(args), 0xADA7);
    const json resolved = resolved_config(args, "adapt", "adapt", block, master_seed(args));
    const std::string run_path = run_record_path(args.out_dir, "adapt", config_hash(resolved));
    if (up_to_date(run_path, {out_ckpt}, args)) {
        std::cout << "adapt: up to date at " << out_ckpt << "\n";
        return;
    }
    guard_outputs({out_ckpt}, args, "adapt");

    const det::ModelParams source = det::load_checkpoint(src_ckpt);
    const data::DatasetManifest manifest = data::load_manifest(root);

    sfda::AdaptationConfig cfg;
    cfg.alpha = block.value("alpha", cfg.alpha);
    cfg.gamma = block.value("gamma", cfg.gamma);
    cfg.tau = block.value("tau", cfg.tau);
    cfg.total_iters = block.value("total_iters", cfg.total_iters);
    cfg.k = block.value("k", cfg.k);
    cfg.mask_max_percent = block.value("mask_max_percent", cfg.mask_max_percent);
    cfg.lr0 = block.value("lr0", cfg.lr0);
    cfg.lr1 = block.value("lr1", cfg.lr1);
    cfg.momentum = block.value("momentum", cfg.momentum);
    cfg.frames_per_sequence = block.value("frames_per_sequence", cfg.frames_per_sequence);
    cfg.entropy_window = block.value("entropy_window", cfg.entropy_window);
    cfg.trs_first = block.value("stage_order", std::string("trs_first")) != "srs_first";
    const std::string sel = block.value("selection", std::string("first_local_min"));
    if (sel != "first_local_min" && sel != "global_min")
        throw SchemaError("adapt.selection must be first_local_min or global_min");
    cfg.selection = sel == "global_min" ? sfda::SelectionRule::GlobalMin
                                        : sfda::SelectionRule::FirstLocalMin;
    cfg.losses.use_mse = block.value("loss_mse", true);
    cfg.losses.use_bce = block.value("loss_bce", true);
    cfg.losses.use_cls = block.value("loss_cls", true);
    cfg.seed = seed;
    if (block.contains("metrics_log")) cfg.metrics_path = resolve(args.out_dir, block.at("metrics_log"));
    if (block.contains("snapshot_dir")) cfg.snapshot_dir = resolve(args.out_dir, block.at("snapshot_dir"));

    std::map<std::string, std::string> meta{{"method", method}, {"seed", std::to_string(seed)}};
    fs::create_directories(fs::path(out_ckpt).parent_path());

    auto write_trace = [&](const sfda::EntropyTrace& trace, long selected) {
        if (!block.contains("trace")) return;
        const std::string path = resolve(args.out_dir, block.at("trace"));
        fs::create_directories(fs::path(path).parent_path());
        json pts = json::array();
        for (const auto& [it, h] : trace.points) pts.push_back({it, h});
        json j{{"window", trace.window}, {"selected_iteration", selected}, {"points", pts}};
        std::ofstream os(path);
        os << j.dump() << "\n";
    };

    if (method == "star_mt" || method == "basic_mt") {
        try {
            cfg.validate(method == "star_mt");
        } catch (const std::invalid_argument& e) {
            throw SchemaError(e.what());
        }
        const sfda::AdaptResult res = method == "star_mt"
                                          ? sfda::adapt(source, manifest, cfg)
                                          : sfda::baseline_basic_mt(source, manifest, cfg);
        meta["selected_iteration"] = std::to_string(res.selected_iteration);
        det::save_checkpoint(res.best, out_ckpt, meta);
        write_trace(res.trace, res.selected_iteration);
    } else if (method == "pseudo_label") {
        sfda::PseudoLabelConfig pl;
        pl.threshold = block.value("pl_threshold", pl.threshold);
        pl.k = cfg.k;
        pl.iters = block.value("pl_iters", pl.iters);
        pl.lr0 = block.value("pl_lr0", pl.lr0);
        pl.lr1 = block.value("pl_lr1", pl.lr1);
        pl.momentum = cfg.momentum;
        pl.match_iou = block.value("match_iou", pl.match_iou);
        pl.entropy_window = cfg.entropy_window;
        pl.selection = cfg.selection;
        pl.seed = seed;
        pl.metrics_path = cfg.metrics_path;
        const sfda::AdaptResult res = sfda::baseline_pseudo_label(source, manifest, pl);
        meta["selected_iteration"] = std::to_string(res.selected_iteration);
        det::save_checkpoint(res.best, out_ckpt, meta);
        write_trace(res.trace, res.selected_iteration);
    } else {
        sfda::OracleConfig oc;
        oc.tam.iters = block.value("oracle_iters", oc.tam.iters);
        oc.tam.lr0 = block.value("oracle_lr0", oc.tam.lr0);
        oc.tam.lr1 = block.value("oracle_lr1", oc.tam.lr1);
        oc.tam.momentum = cfg.momentum;
        oc.tam.k = cfg.k;
        oc.tam.match_iou = block.value("match_iou", oc.tam.match_iou);
        oc.seed = seed;
        const det::ModelParams oracle = sfda::oracle_finetune(source, manifest, oc);
        det::save_checkpoint(oracle, out_ckpt, meta);
    }

    finish_run(args, "adapt", resolved,
               {{src_ckpt, hash_path(src_ckpt)}, {root, hash_path(root + "/manifest.json")}},
               {out_ckpt});
    std::cout << "adapt: method=" << method << " wrote " << out_ckpt << "\n";
}

void cmd_eval(const CommandArgs& args) {
    check_device(args);
    check_global_keys(args.config);
    const json& block = require_block(args.config, "eval");
    check_keys(block, "eval",
               {"checkpoint", "dataset_root", "split", "k", "nms_iou", "conf_thresh", "record",
                "model_id", "dataset_id"});

    const std::string ckpt = resolve(args.out_dir, block.value("checkpoint", std::string("models/source.ckpt")));
    const std::string root = resolve(args.out_dir, block.value("dataset_root", std::string("data/clean")));
    const std::string split = block.value("split", std::string("test"));
    const std::string record_path =
        resolve(args.out_dir, block.value("record", std::string("metrics/record.json")));
    require_input(ckpt, "checkpoint");
    require_input(root + "/manifest.json", "dataset manifest");

    eval::EvalOptions opt;
    opt.k = block.value("k", opt.k);
    opt.nms_iou = block.value("nms_iou", opt.nms_iou);
    opt.conf_thresh = block.value("conf_thresh", opt.conf_thresh);

    const json resolved = resolved_config(args, "eval", "eval", block, master_seed(args));
    const std::string run_path = run_record_path(args.out_dir, "eval", config_hash(resolved));
    if (up_to_date(run_path, {record_path}, args)) {
        std::cout << "eval: up to date at " << record_path << "\n";
        return;
    }

    const det::ModelParams params = det::load_checkpoint(ckpt);
    const data::DatasetManifest manifest = data::load_manifest(root);
    const eval::MetricsRecord rec = eval::evaluate_model(
        params, manifest, split, opt, block.value("model_id", std::string("model")),
        block.value("dataset_id", std::string("dataset")));
    fs::create_directories(fs::path(record_path).parent_path());
    eval::save_record(rec, record_path);
    finish_run(args, "eval", resolved, {{ckpt, hash_path(ckpt)}}, {record_path});
    std::cout << "eval: mean AP50 = " << rec.mean_ap50 << " -> " << record_path << "\n";
}

void cmd_report(const CommandArgs& args) {
    check_device(args);
    check_global_keys(args.config);
    const json& block = require_block(args.config, "report");
    check_keys(block, "report", {"records", "trace", "snapshot_eval", "out_dir"});

    eval::ReportInputs in;
    if (!block.contains("records") || !block.at("records").is_array() ||
        block.at("records").empty())
        throw SchemaError("report.records must list at least one metrics record");
    for (const auto& p : block.at("records")) {
        const std::string path = resolve(args.out_dir, p.get<std::string>());
        require_input(path, "metrics record");
        in.records.push_back(eval::load_record(path));
    }

    sfda::EntropyTrace trace;
    if (block.contains("trace")) {
        const std::string path = resolve(args.out_dir, block.at("trace"));
        require_input(path, "entropy trace");
        std::ifstream is(path);
        const json j = json::parse(is);
        trace.window = j.at("window").get<int>();
        for (const auto& pt : j.at("points"))
            trace.points.emplace_back(pt.at(0).get<long>(), pt.at(1).get<real>());
        in.selected_iteration = j.value("selected_iteration", -1L);
        in.trace = &trace;
    }

    if (block.contains("snapshot_eval")) {
        const json& se = block.at("snapshot_eval");
        check_keys(se, "report.snapshot_eval",
                   {"snapshot_dir", "dataset_root", "split", "k", "nms_iou", "conf_thresh"});
        const std::string dir = resolve(args.out_dir, se.at("snapshot_dir"));
        const std::string root = resolve(args.out_dir, se.at("dataset_root"));
        require_input(root + "/manifest.json", "dataset manifest");
        const data::DatasetManifest manifest = data::load_manifest(root);
        eval::EvalOptions opt;
        opt.k = se.value("k", opt.k);
        opt.nms_iou = se.value("nms_iou", opt.nms_iou);
        opt.conf_thresh = se.value("conf_thresh", opt.conf_thresh);
        const std::string split = se.value("split", std::string("test"));
        std::vector<std::string> snaps;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".ckpt") snaps.push_back(e.path().string());
        std::sort(snaps.begin(), snaps.end());
        for (const auto& path : snaps) {
            const det::ModelParams params = det::load_checkpoint(path);
            const eval::MetricsRecord rec =
                eval::evaluate_model(params, manifest, split, opt, path, root);
            // Snapshot files are named teacher_<iteration>.ckpt.
            const std::string stem = fs::path(path).stem().string();
            const size_t us = stem.find_last_of('_');
            in.snapshot_ap50[std::stol(stem.substr(us + 1))] = rec.mean_ap50;
        }
    }

    const std::string out = resolve(args.out_dir, block.value("out_dir", std::string("report")));
    eval::report(in, out);

    const json resolved = resolved_config(args, "report", "report", block, master_seed(args));
    finish_run(args, "report", resolved, {}, {out});
    std::cout << "report: wrote " << out << "\n";
}

int run_command(const std::string& command, const CommandArgs& args) {
    try {
        if (command == "gen-data") cmd_gen_data(args);
        else if (command == "degrade") cmd_degrade(args);
        else if (command == "train-source") cmd_train_source(args);
        else if (command == "adapt") cmd_adapt(args);
        else if (command == "eval") cmd_eval(args);
        else if (command == "report") cmd_report(args);
        else {
            std::cerr << "unknown command: " << command << "\n";
            return 2;
        }
        return 0;
    } catch (const SchemaError& e) {
        std::cerr << command << ": " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifactError& e) {
        std::cerr << command << ": " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << command << ": " << e.what() << "\n";
        return 1;
    }
}

CommandArgs args_from_run_record(const RunRecord& rec) {
    CommandArgs args;
    args.config = rec.resolved_config;
    args.config.erase("command");
    args.out_dir = rec.resolved_config.at("out").get<std::string>();
    args.seed_override = rec.resolved_config.at("master_seed").get<uint64_t>();
    return args;
}

} // namespace starmt::cli
