#pragma once

// Shared setup for tests that need trained social and meta policies.

#include <filesystem>

#include "ismeta/config.hpp"
#include "ismeta/pipeline.hpp"

namespace fixture {

inline std::filesystem::path preset(const char* name) {
    return std::filesystem::path(ISMETA_SOURCE_DIR) / "presets" / name;
}

inline const ismeta::RunConfig& synthetic() {
    static const ismeta::RunConfig cfg = ismeta::load_config(preset("synthetic.preset"));
    return cfg;
}

inline const ismeta::Simulator& simulator() {
    static const ismeta::Simulator sim(synthetic().pipeline.scenario);
    return sim;
}

/// Baselines and meta-policy trained once per test binary with the preset.
inline const ismeta::SocialStage& stage() {
    static const ismeta::SocialStage s = ismeta::train_social_stage(simulator(), synthetic().pipeline);
    return s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("ismeta_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixture
