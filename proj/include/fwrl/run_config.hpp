#pragma once

#include "fwrl/dynamics.hpp"
#include "fwrl/env.hpp"
#include "fwrl/keyvalue.hpp"
#include "fwrl/nnet.hpp"
#include "fwrl/sac.hpp"

#include <filesystem>
#include <string>

namespace fwrl {

/**
 * @brief Everything a run depends on, in one flat key/value document.
 *
 * The airframe parameters come from `uav.file` (a path relative to the config
 * file) and may be overridden key by key with `uav.<name>`. Serialization
 * inlines the resolved parameters, so a snapshot needs no other file.
 */
struct RunConfig {
    static constexpr const char* kSchema = "fwrl.run/1";

    dynamics::UavParams uav = dynamics::UavParams::nominal();
    env::EpisodeConfig env;
    nnet::PolicyConfig model;
    sac::TrainerConfig train;
    std::string pid_gains_file;  ///< empty: gains calibrated from the reference sensitivities

    void validate() const;
    KeyValueFile to_keyvalue() const;
    std::string serialize() const { return to_keyvalue().serialize(); }
    static RunConfig from_keyvalue(const KeyValueFile& kv, const std::filesystem::path& base_dir = {});
    static RunConfig parse(std::string_view text, const std::filesystem::path& base_dir = {});
    static RunConfig load(const std::filesystem::path& path);
    bool operator==(const RunConfig& other) const;
};

}  // namespace fwrl
