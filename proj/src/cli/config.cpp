#include "starmt/cli/config.hpp"

#include "starmt/io/hash.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace starmt::cli {

json load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw SchemaError("config file not found: " + path);
    try {
        return json::parse(is, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw SchemaError("config parse error in " + path + ": " + e.what());
    }
}

void check_keys(const json& obj, const std::string& context, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw SchemaError("config block '" + context + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key))
            throw SchemaError("unknown config key '" + context + "." + key + "'");
    }
}

const json& require_block(const json& cfg, const std::string& name) {
    if (!cfg.contains(name))
        throw SchemaError("config is missing the required '" + name + "' block");
    return cfg.at(name);
}

std::string config_hash(const json& resolved) { return io::sha256_hex(resolved.dump()); }

std::string hash_path(const std::string& path) {
    if (fs::is_regular_file(path)) return io::sha256_file(path);
    if (!fs::is_directory(path)) throw MissingArtifactError("missing input: " + path);
    std::vector<std::string> rels;
    for (const auto& e : fs::recursive_directory_iterator(path))
        if (e.is_regular_file()) rels.push_back(fs::relative(e.path(), path).string());
    std::sort(rels.begin(), rels.end());
    std::string acc;
    for (const auto& r : rels) acc += r + ":" + io::sha256_file((fs::path(path) / r).string()) + "\n";
    return io::sha256_hex(acc);
}

void write_run_record(const RunRecord& rec, const std::string& path) {
    json j;
    j["command"] = rec.command;
    j["resolved_config"] = rec.resolved_config;
    j["config_hash"] = rec.config_hash;
    j["inputs"] = rec.input_hashes;
    j["outputs"] = rec.outputs;
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream os(path);
    os << j.dump(2) << "\n";
    if (!os) throw std::runtime_error("write_run_record: failed writing " + path);
}

RunRecord read_run_record(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw MissingArtifactError("run record not found: " + path);
    json j = json::parse(is);
    RunRecord rec;
    rec.command = j.at("command").get<std::string>();
    rec.resolved_config = j.at("resolved_config");
    rec.config_hash = j.at("config_hash").get<std::string>();
    rec.input_hashes = j.at("inputs").get<std::map<std::string, std::string>>();
    rec.outputs = j.at("outputs").get<std::vector<std::string>>();
    return rec;
}

} // namespace starmt::cli
