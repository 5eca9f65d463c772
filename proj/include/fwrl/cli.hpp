#pragma once

#include "fwrl/keyvalue.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace fwrl::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeFailure = 1;
inline constexpr int kUsage = 2;

/// Environment variable replacing the default output directory.
inline constexpr const char* kOutDirEnv = "FWRL_OUT_DIR";

/**
 * @brief Record of one command invocation, written as `manifest.txt` in the
 * output directory.
 */
struct RunManifest {
    static constexpr const char* kSchema = "fwrl.manifest/1";

    std::string command;
    std::vector<std::string> argv;
    KeyValueFile config;  ///< resolved run config snapshot
    std::uint64_t seed = 0;
    std::string version;
    std::vector<std::pair<std::string, std::string>> inputs;   ///< role, "path hash"
    std::vector<std::pair<std::string, std::string>> outputs;  ///< path relative to out dir, hash
    double wall_clock = 0;
    std::string status = "ok";
    std::string error;

    KeyValueFile to_keyvalue() const;
    static RunManifest from_keyvalue(const KeyValueFile& kv);
    void save(const std::filesystem::path& path) const;
    static RunManifest load(const std::filesystem::path& path);
};

/// FNV-1a hash of a file's bytes, as 16 hex digits.
std::string hash_file(const std::filesystem::path& path);

/// Relative path and hash of every regular file under `dir` except the manifest, sorted.
std::vector<std::pair<std::string, std::string>> hash_outputs(const std::filesystem::path& dir);

/// Runs one command line (argv[0] is the program name). Returns the exit code.
int dispatch(const std::vector<std::string>& argv);
int dispatch(int argc, const char* const* argv);

}  // namespace fwrl::cli
