#pragma once

// Subcommands of the `memo` tool. Each returns a process exit status.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "memo/config.hpp"

namespace memo::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kData = 2,
    kNumeric = 3,
};

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

struct RunManifest {
    std::string command;
    std::string version;
    std::uint64_t seed = 0;
    KeyValueConfig config;
    std::map<std::string, std::filesystem::path> inputs;
    std::map<std::string, std::filesystem::path> outputs;

    // `key=value` lines; input digests are computed here.
    std::string render() const;
    void write(const std::filesystem::path& path) const;
};

// Full command line without the program name, e.g. {"train", "--config", "run.cfg"}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace memo::cli
