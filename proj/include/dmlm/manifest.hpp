#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

namespace dmlm {

/// Hash of the canonical (key-sorted) serialization, so two configs with
/// different field insertion orders hash identically.
std::string config_hash_of(const nlohmann::json& config);

/// Reproducibility record written into every artifact directory before
/// any work begins.
struct RunManifest {
    std::string subcommand;
    nlohmann::json config;  // fully materialized, defaults included
    std::uint64_t seed = 0;
    std::map<std::string, std::string> artifacts;
    std::string config_hash;

    static RunManifest make(const std::string& subcommand, nlohmann::json config,
                            std::uint64_t seed, std::map<std::string, std::string> artifacts);
};

void write_manifest(const RunManifest& m, const std::string& dir);
RunManifest load_manifest(const std::string& dir);

}  // namespace dmlm
