#include "dmlm/manifest.hpp"

#include "dmlm/errors.hpp"
#include "dmlm/util.hpp"

namespace dmlm {

std::string config_hash_of(const nlohmann::json& config) {
    // nlohmann objects iterate in key order, so dump() is canonical.
    return to_hex(fnv1a64(config.dump()));
}

RunManifest RunManifest::make(const std::string& subcommand, nlohmann::json config,
                              std::uint64_t seed, std::map<std::string, std::string> artifacts) {
    RunManifest m;
    m.subcommand = subcommand;
    m.config = std::move(config);
    m.seed = seed;
    m.artifacts = std::move(artifacts);
    m.config_hash = config_hash_of(m.config);
    return m;
}

void write_manifest(const RunManifest& m, const std::string& dir) {
    ensure_dir(dir);
    nlohmann::json j;
    j["subcommand"] = m.subcommand;
    j["config"] = m.config;
    j["seed"] = m.seed;
    j["artifacts"] = m.artifacts;
    j["config_hash"] = m.config_hash;
    atomic_write_file(dir + "/manifest.json", j.dump(2) + "\n");
}

RunManifest load_manifest(const std::string& dir) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(dir + "/manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw io_error("manifest parse failure in " + dir + ": " + e.what());
    }
    RunManifest m;
    m.subcommand = j.at("subcommand").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    m.config_hash = j.at("config_hash").get<std::string>();
    return m;
}

}  // namespace dmlm
