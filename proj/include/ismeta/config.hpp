#pragma once

// Run configuration files: YAML mappings with optional `inherit: <file>`
// chains (paths relative to the inheriting file; child keys win, nested
// mappings merge key by key).

#include <filesystem>
#include <string>
#include <vector>

#include "ismeta/pipeline.hpp"

namespace ismeta {

struct RunConfig {
    PipelineConfig pipeline;
    std::vector<Variant> variants{Variant::GEP, Variant::GIS, Variant::NEP, Variant::CEIS};
    std::vector<double> ablation_means{-0.5, 0.5, 1.5, 2.5};
    std::vector<double> ablation_sigmas{0.5, 0.75, 1.0};
    /// Literals as written (resolved against the config directory), kept for
    /// the snapshot.
    std::string p_naturalistic_literal = "gaussian(1.5,0.5)";
    std::string p0_literal = "gaussian(0.5,0.5)";
};

/// Resolves a --config argument: an existing path, else a file of that name
/// in the shipped preset directory.
std::filesystem::path resolve_config_path(const std::string& name);

RunConfig load_config(const std::filesystem::path& file);
RunConfig parse_config(const std::string& yaml_text, const std::filesystem::path& base_dir = {});

/// Fully resolved YAML (no inherit) that loads back to the same RunConfig.
std::string config_to_yaml(const RunConfig& cfg);

}  // namespace ismeta
