#pragma once

// Trajectory ingestion, per-vehicle β estimation by Boltzmann likelihood under
// the meta-policy, and the naturalistic KDE fit.
//
// Input CSV (header required):
//   vehicle_id,step,s,v,action_index[,ego_gap,ego_speed]
// s and v are path progress (m) and speed (m/s) of the recorded vehicle;
// ego_gap/ego_speed describe the ego it interacts with. Without them the
// vehicle is treated as unobstructed (gap +inf, ego speed 0).

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ismeta/distributions.hpp"
#include "ismeta/policies.hpp"
#include "ismeta/rollout.hpp"
#include "ismeta/simulator.hpp"

namespace ismeta {

struct TrajectoryStep {
    int step = 0;
    double s = 0.0;
    double v = 0.0;
    double ego_gap = 0.0;
    double ego_speed = 0.0;
    std::size_t action = 0;
    Observation obs;  // β left at 0; filled per grid point
};

struct Trajectory {
    std::string vehicle_id;
    std::string source;
    std::vector<TrajectoryStep> steps;
};

struct TrajectoryFormat {
    char delimiter = ',';
    std::string source;  // tag stored on every trajectory
};

std::vector<Trajectory> parse_trajectories(std::string_view text, const Simulator& sim, const FeatureMap& map,
                                           const TrajectoryFormat& format = {});
std::vector<Trajectory> ingest_trajectories(const std::filesystem::path& path, const Simulator& sim,
                                            const FeatureMap& map, TrajectoryFormat format = {});

/// One trajectory per social vehicle of a simulated episode.
std::vector<Trajectory> trajectories_from_episode(const Simulator& sim, const FeatureMap& map,
                                                  const EpisodeRecord& ep, const std::string& id_prefix);
std::string trajectories_csv(std::span<const Trajectory> trajectories);

/// -1.5, -1.4, ..., 3.5
std::vector<double> default_beta_grid();

struct BetaEstimate {
    double beta_hat = 0.0;
    std::vector<double> grid;
    std::vector<double> log_likelihood;
    bool low_confidence = false;
};

/// Spread (max - min) of the curve below which an estimate is flagged.
inline constexpr double kLowConfidenceSpread = 0.5;

BetaEstimate estimate_beta(const Trajectory& traj, const SoftmaxPolicy& meta, std::span<const double> grid);

struct NaturalisticFit {
    ScenarioDistribution kde;
    ScenarioDistribution gaussian;  // moment matched
    double mean = 0.0;
    double sd = 0.0;  // n - 1 normalization
};

NaturalisticFit fit_naturalistic(std::span<const double> betas, std::optional<double> bandwidth = std::nullopt);

std::string betas_csv(std::span<const Trajectory> trajectories, std::span<const BetaEstimate> estimates);
std::string naturalistic_json(const NaturalisticFit& fit);

}  // namespace ismeta
