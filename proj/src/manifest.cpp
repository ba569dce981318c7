#include "vffc/manifest.hpp"

#include <chrono>
#include <fstream>

#include <json.hpp>

#include "vffc/errors.hpp"

#ifndef VFFC_BUILD_ID
#define VFFC_BUILD_ID "unknown"
#endif

namespace vffc {

namespace {

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

void write_manifest(const std::string& path, const RunManifest& m) {
    nlohmann::ordered_json j;
    j["command"] = m.command;
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : m.config) cfg[k] = v;
    j["config"] = cfg;
    j["seeds"] = m.seeds;
    j["outputs"] = m.outputs;
    j["build_id"] = VFFC_BUILD_ID;
    j["timestamp"] = utc_now();
    std::ofstream os(path);
    if (!os) throw DataError("manifest: cannot write " + path);
    os << j.dump(2) << "\n";
}

}  // namespace vffc
