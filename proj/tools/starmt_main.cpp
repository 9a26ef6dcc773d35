#include "starmt/cli/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"starmt: source-free video detector adaptation pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir, method, device = "cpu", from_run;
    int64_t seed = -1;
    bool force = false;

    auto add_common = [&](CLI::App* cmd, bool with_method) {
        cmd->add_option("--config", config_path, "experiment config file (JSON, // comments ok)");
        cmd->add_option("--from-run", from_run, "re-run from a recorded run.json");
        cmd->add_option("--out", out_dir, "output root directory");
        cmd->add_option("--seed", seed, "override the master seed");
        cmd->add_option("--device", device, "cpu (gpu builds are not provided)");
        cmd->add_flag("--force", force, "overwrite existing outputs");
        if (with_method)
            cmd->add_option("--method", method, "star_mt|basic_mt|pseudo_label|oracle");
    };

    add_common(app.add_subcommand("gen-data", "generate the synthetic source dataset"), false);
    add_common(app.add_subcommand("degrade", "synthesize a degraded target dataset"), false);
    add_common(app.add_subcommand("train-source", "supervised training on the source split"), false);
    add_common(app.add_subcommand("adapt", "source-free adaptation on the target split"), true);
    add_common(app.add_subcommand("eval", "AP50 + self-entropy over a split"), false);
    add_common(app.add_subcommand("report", "tables and curves from metrics records"), false);

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    starmt::cli::CommandArgs args;
    try {
        if (!from_run.empty()) {
            args = starmt::cli::args_from_run_record(starmt::cli::read_run_record(from_run));
        } else if (!config_path.empty()) {
            args.config = starmt::cli::load_config_file(config_path);
        } else {
            std::cerr << command << ": either --config or --from-run is required\n";
            return 2;
        }
    } catch (const starmt::cli::SchemaError& e) {
        std::cerr << command << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << command << ": " << e.what() << "\n";
        return 3;
    }

    if (!out_dir.empty())
        args.out_dir = out_dir;
    else if (args.out_dir.empty())
        args.out_dir = args.config.value("out", std::string("."));
    if (seed >= 0) args.seed_override = static_cast<uint64_t>(seed);
    args.force = force;
    args.method_override = method;
    args.device = device;

    return starmt::cli::run_command(command, args);
}
