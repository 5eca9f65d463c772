#pragma once

#include "fwrl/env.hpp"
#include "fwrl/nnet.hpp"

#include <filesystem>
#include <string>

namespace fwrl {

/// A deployable controller: policy weights plus the normalizer statistics
/// it was trained with.
struct PolicyCheckpoint {
    static constexpr const char* kSchema = "fwrl.policy/1";

    nnet::Policy policy;
    env::Normalizer normalizer;
    long env_steps = 0;
    std::uint64_t seed = 0;
    KeyValueFile metadata;  ///< free-form extra keys (run config snapshot)

    void save(const std::filesystem::path& path) const;
    static PolicyCheckpoint load(const std::filesystem::path& path);
};

}  // namespace fwrl
