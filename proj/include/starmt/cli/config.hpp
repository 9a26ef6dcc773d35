#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

namespace starmt::cli {

// Config problems exit with status 2; missing upstream artifacts with 3.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Parses a config document (JSON, // comments allowed).
nlohmann::json load_config_file(const std::string& path);

// Rejects unknown keys, naming the offender.
void check_keys(const nlohmann::json& obj, const std::string& context,
                const std::set<std::string>& allowed);

const nlohmann::json& require_block(const nlohmann::json& cfg, const std::string& name);

// Canonical content hash of a resolved config object.
std::string config_hash(const nlohmann::json& resolved);

// Combined content hash of a file or directory tree (sorted relative paths).
std::string hash_path(const std::string& path);

struct RunRecord {
    std::string command;
    nlohmann::json resolved_config;
    std::string config_hash;
    std::map<std::string, std::string> input_hashes;
    std::vector<std::string> outputs;
};

void write_run_record(const RunRecord& rec, const std::string& path);
RunRecord read_run_record(const std::string& path);

} // namespace starmt::cli
