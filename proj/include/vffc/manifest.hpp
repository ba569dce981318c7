#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace vffc {

// Provenance record written next to every artifact-producing command's
// outputs. Everything except the timestamp is deterministic given the seed.
struct RunManifest {
    std::string command;
    std::vector<std::pair<std::string, std::string>> config;  // resolved, in order
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> outputs;
};

void write_manifest(const std::string& path, const RunManifest& m);

}  // namespace vffc
