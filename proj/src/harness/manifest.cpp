#include "cotsm/harness/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include "cotsm/errors.hpp"
#include "cotsm/harness/hash.hpp"

namespace cotsm::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

RunManifest RunManifest::open(const fs::path& dir, std::string config_hash) {
    RunManifest m;
    m.dir_ = dir;
    m.config_hash_ = std::move(config_hash);
    const auto file = dir / "manifest.json";
    if (!fs::exists(file)) return m;
    std::ifstream in(file);
    try {
        const auto doc = json::parse(in);
        for (const auto& [name, r] : doc.at("artifacts").items())
            m.artifacts_[name] = {r.at("path").get<std::string>(), r.at("sha256").get<std::string>(),
                                  r.at("config_hash").get<std::string>(), r.at("command").get<std::string>(),
                                  r.at("written_at").get<std::string>()};
    } catch (const json::exception& e) {
        throw DependencyError("manifest: " + file.string() + " is unreadable (" + e.what() + ")");
    }
    return m;
}

void RunManifest::record(const std::string& name, const std::string& relative_path, const std::string& command) {
    artifacts_[name] = {relative_path, sha256_file((dir_ / relative_path).string()), config_hash_, command, utc_now()};
    save();
}

fs::path RunManifest::require(const std::string& name) const {
    const auto it = artifacts_.find(name);
    if (it == artifacts_.end())
        throw DependencyError("missing upstream artifact '" + name + "' in " + dir_.string() + "; run its command first");
    const auto& r = it->second;
    const auto path = dir_ / r.path;
    if (!fs::exists(path)) throw DependencyError("artifact '" + name + "' was recorded but " + path.string() + " is gone");
    if (r.config_hash != config_hash_)
        throw StaleArtifactError("artifact '" + name + "' was produced under config " + r.config_hash.substr(0, 12) +
                                 ", current config is " + config_hash_.substr(0, 12) + "; rerun '" + r.command + "'");
    if (sha256_file(path.string()) != r.sha256)
        throw StaleArtifactError("artifact '" + name + "' changed on disk since '" + r.command + "' wrote it");
    return path;
}

json RunManifest::to_json() const {
    json arts = json::object();
    for (const auto& [name, r] : artifacts_)
        arts[name] = {{"path", r.path},
                      {"sha256", r.sha256},
                      {"config_hash", r.config_hash},
                      {"command", r.command},
                      {"written_at", r.written_at}};
    return {{"config_hash", config_hash_}, {"artifacts", arts}};
}

void RunManifest::save() const {
    fs::create_directories(dir_);
    const auto tmp = dir_ / "manifest.json.tmp";
    {
        std::ofstream out(tmp);
        out << to_json().dump(2) << '\n';
        if (!out) throw Error("manifest: cannot write " + tmp.string());
    }
    fs::rename(tmp, dir_ / "manifest.json");
}

}  // namespace cotsm::harness
