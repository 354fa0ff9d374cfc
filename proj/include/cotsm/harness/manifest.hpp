#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

namespace cotsm::harness {

struct ArtifactRecord {
    std::string path;  // relative to the run directory
    std::string sha256;
    std::string config_hash;  // config that produced the file
    std::string command;
    std::string written_at;  // UTC, informational only
};

// Index of every file a run directory holds. Downstream commands go through require(),
// which refuses missing files, files edited since they were recorded, and files made
// under a different configuration.
class RunManifest {
public:
    // Loads <dir>/manifest.json when present; otherwise starts empty.
    static RunManifest open(const std::filesystem::path& dir, std::string config_hash);

    // Hashes the file and stores the record (persisted immediately).
    void record(const std::string& name, const std::string& relative_path, const std::string& command);

    // Absolute path of a verified artifact. DependencyError when missing, StaleArtifactError
    // on a content or configuration mismatch.
    [[nodiscard]] std::filesystem::path require(const std::string& name) const;

    [[nodiscard]] bool contains(const std::string& name) const { return artifacts_.contains(name); }
    [[nodiscard]] const std::map<std::string, ArtifactRecord>& artifacts() const { return artifacts_; }
    [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }
    [[nodiscard]] const std::string& config_hash() const { return config_hash_; }

    [[nodiscard]] nlohmann::json to_json() const;

private:
    void save() const;

    std::filesystem::path dir_;
    std::string config_hash_;
    std::map<std::string, ArtifactRecord> artifacts_;
};

}  // namespace cotsm::harness
