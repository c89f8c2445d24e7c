#pragma once

// Seeded T-intersection merge game. The major road runs west to east; the ego
// comes up a minor road from the south, turns right and merges into the same
// lane as the social vehicles. Vehicles move along fixed polylines with a
// discrete-acceleration double integrator.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ismeta {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

double distance(Vec2 a, Vec2 b) noexcept;

/// Arc-length parameterized polyline. Positions beyond either end extend
/// along the first/last segment.
class Polyline {
public:
    Polyline() = default;
    explicit Polyline(std::vector<Vec2> points);

    double length() const noexcept { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
    Vec2 at(double s) const;
    /// Distance from p to the nearest point on the polyline, and the arc
    /// length of that point.
    std::pair<double, double> project(Vec2 p) const;
    const std::vector<Vec2>& points() const noexcept { return points_; }

private:
    std::vector<Vec2> points_;
    std::vector<double> cumulative_;
};

struct SpawnRange {
    double s_lo = 0.0;
    double s_hi = 0.0;
    double v_lo = 0.0;
    double v_hi = 0.0;
};

struct EgoReward {
    double success = 1.0;
    double collision = -2.0;
    double step = -0.01;
};

/// Social per-step reward r_goal + β·r_speed with x = v/v_max:
///   r_speed = -x
///   r_goal  = goal_bonus·[goal reached] + cruise_weight·(2·cruise_speed·x - x²)
/// The cruise term gives the β = 0 driver an interior preferred speed, so the
/// optimal speed x* = cruise_speed - β / (2·cruise_weight) is graded in β.
struct SocialReward {
    double goal_bonus = 1.0;
    double cruise_speed = 0.65;
    double cruise_weight = 10.0 / 3.0;
};

struct ScenarioConfig {
    double dt = 0.2;
    int max_steps = 100;
    double v_max = 10.0;
    std::vector<double> accel_set{-4.0, -2.0, 0.0, 2.0};
    double collision_radius = 2.0;
    int n_social = 2;
    Polyline ego_path;
    Polyline social_path;
    double ego_goal = 60.0;
    double social_goal = 200.0;
    /// One range per social vehicle; reused cyclically when n_social exceeds it.
    std::vector<SpawnRange> social_spawn;
    EgoReward ego_reward;
    SocialReward social_reward;

    /// Default T-intersection geometry.
    static ScenarioConfig t_intersection();

    /// Throws std::invalid_argument on any violated invariant, including paths
    /// that do not meet in exactly one conflict region.
    void validate() const;
};

enum class Role { Ego, Social };
enum class Outcome { Success, Collision, Timeout };

std::string_view outcome_name(Outcome o) noexcept;

struct Vehicle {
    Role role = Role::Ego;
    double s = 0.0;
    double v = 0.0;
    double beta = 0.0;
    /// Social vehicles leave the scene once they reach their goal.
    bool active = true;
    bool operator==(const Vehicle&) const = default;
};

struct WorldState {
    int step = 0;
    std::vector<Vehicle> vehicles;  // vehicles[0] is the ego
    std::optional<Outcome> outcome;

    bool terminal() const noexcept { return outcome.has_value(); }
    bool operator==(const WorldState&) const = default;
};

struct StepResult {
    WorldState state;
    double ego_reward = 0.0;
    std::vector<double> social_rewards;
    std::optional<Outcome> outcome;
};

/// Immutable scenario plus the derived conflict geometry.
class Simulator {
public:
    explicit Simulator(ScenarioConfig config);

    const ScenarioConfig& config() const noexcept { return config_; }
    std::size_t action_count() const noexcept { return config_.accel_set.size(); }
    /// Index of the strongest braking action.
    std::size_t brake_action() const noexcept;
    std::size_t max_accel_action() const noexcept;

    /// Arc length at which each path enters the conflict region.
    double ego_conflict_s() const noexcept { return ego_conflict_s_; }
    double social_conflict_s() const noexcept { return social_conflict_s_; }

    WorldState reset(std::span<const double> betas, std::uint64_t seed) const;
    StepResult step(const WorldState& state, std::size_t ego_action, std::span<const std::size_t> social_actions) const;

    Vec2 position(const Vehicle& v) const;
    /// Signed distance along the merged lane: positive when `other` is ahead
    /// of `self` relative to their conflict entry points.
    double merge_gap(const Vehicle& self, const Vehicle& other) const;

private:
    double merge_coordinate(const Vehicle& v) const;

    ScenarioConfig config_;
    double ego_conflict_s_ = 0.0;
    double social_conflict_s_ = 0.0;
};

// Free-function forms.
WorldState reset(const Simulator& sim, std::span<const double> betas, std::uint64_t seed);
StepResult step(const Simulator& sim, const WorldState& state, std::size_t ego_action,
                std::span<const std::size_t> social_actions);

}  // namespace ismeta
