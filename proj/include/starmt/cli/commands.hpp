#pragma once

#include "starmt/cli/config.hpp"

#include <optional>
#include <string>

namespace starmt::cli {

struct CommandArgs {
    nlohmann::json config;
    std::string out_dir;
    std::optional<uint64_t> seed_override;
    bool force = false;
    std::string method_override; // adapt only
    std::string device = "cpu";
};

// Executes one pipeline command; throws SchemaError / MissingArtifactError /
// std::runtime_error on failure.
void cmd_gen_data(const CommandArgs& args);
void cmd_degrade(const CommandArgs& args);
void cmd_train_source(const CommandArgs& args);
void cmd_adapt(const CommandArgs& args);
void cmd_eval(const CommandArgs& args);
void cmd_report(const CommandArgs& args);

// Dispatch by name with exception-to-exit-code mapping:
// 0 ok, 1 runtime failure, 2 schema validation, 3 missing upstream artifact.
int run_command(const std::string& command, const CommandArgs& args);

// Rebuilds the arguments of a previous run from its provenance record.
CommandArgs args_from_run_record(const RunRecord& rec);

} // namespace starmt::cli
