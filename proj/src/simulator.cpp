#include "ismeta/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ismeta/errors.hpp"
#include "ismeta/random.hpp"

namespace ismeta {

double distance(Vec2 a, Vec2 b) noexcept { return std::hypot(a.x - b.x, a.y - b.y); }

Polyline::Polyline(std::vector<Vec2> points) : points_(std::move(points)) {
    if (points_.size() < 2) throw std::invalid_argument("polyline needs at least two points");
    cumulative_.resize(points_.size());
    cumulative_[0] = 0.0;
    for (std::size_t i = 1; i < points_.size(); ++i) {
        const double seg = distance(points_[i - 1], points_[i]);
        if (!(seg > 0.0)) throw std::invalid_argument("polyline has a zero-length segment");
        cumulative_[i] = cumulative_[i - 1] + seg;
    }
}

Vec2 Polyline::at(double s) const {
    if (points_.size() < 2) throw std::logic_error("empty polyline");
    std::size_t seg = 0;
    if (s >= cumulative_.back()) {
        seg = points_.size() - 2;
    } else if (s > 0.0) {
        seg = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), s) - cumulative_.begin()) - 1;
    }
    const Vec2 a = points_[seg];
    const Vec2 b = points_[seg + 1];
    const double len = cumulative_[seg + 1] - cumulative_[seg];
    const double t = (s - cumulative_[seg]) / len;
    return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
}

std::pair<double, double> Polyline::project(Vec2 p) const {
    double best = std::numeric_limits<double>::infinity();
    double best_s = 0.0;
    for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
        const Vec2 a = points_[i];
        const Vec2 b = points_[i + 1];
        const double dx = b.x - a.x;
        const double dy = b.y - a.y;
        const double len2 = dx * dx + dy * dy;
        const double t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
        const Vec2 q{a.x + t * dx, a.y + t * dy};
        const double d = distance(p, q);
        if (d < best) {
            best = d;
            best_s = cumulative_[i] + t * std::sqrt(len2);
        }
    }
    return {best, best_s};
}

std::string_view outcome_name(Outcome o) noexcept {
    switch (o) {
        case Outcome::Success: return "success";
        case Outcome::Collision: return "collision";
        case Outcome::Timeout: return "timeout";
    }
    return "?";
}

ScenarioConfig ScenarioConfig::t_intersection() {
    ScenarioConfig c;
    // Minor road from the south, a right turn of radius 6 m, then the major road.
    std::vector<Vec2> ego{{0.0, -40.0}, {0.0, -6.0}};
    constexpr int kArcSegments = 8;
    for (int i = 1; i <= kArcSegments; ++i) {
        const double phi = (std::numbers::pi / 2.0) * i / kArcSegments;
        ego.push_back({6.0 - 6.0 * std::cos(phi), -6.0 + 6.0 * std::sin(phi)});
    }
    ego.push_back({220.0, 0.0});
    c.ego_path = Polyline(std::move(ego));
    c.social_path = Polyline({{-80.0, 0.0}, {220.0, 0.0}});
    c.social_spawn = {{30.0, 50.0, 4.0, 8.0}, {0.0, 20.0, 4.0, 8.0}};
    return c;
}

void ScenarioConfig::validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("scenario: dt must be > 0");
    if (max_steps < 1) throw std::invalid_argument("scenario: max_steps must be >= 1");
    if (!(v_max > 0.0)) throw std::invalid_argument("scenario: v_max must be > 0");
    if (accel_set.empty()) throw std::invalid_argument("scenario: accel_set is empty");
    if (!std::is_sorted(accel_set.begin(), accel_set.end()) ||
        std::adjacent_find(accel_set.begin(), accel_set.end()) != accel_set.end())
        throw std::invalid_argument("scenario: accel_set must be strictly increasing");
    if (!(collision_radius > 0.0)) throw std::invalid_argument("scenario: collision_radius must be > 0");
    if (n_social < 0) throw std::invalid_argument("scenario: n_social must be >= 0");
    if (n_social > 0 && social_spawn.empty()) throw std::invalid_argument("scenario: social_spawn is empty");
    for (const auto& r : social_spawn)
        if (r.s_lo > r.s_hi || r.v_lo > r.v_hi || r.v_lo < 0.0 || r.v_hi > v_max)
            throw std::invalid_argument("scenario: malformed spawn range");
    if (!(ego_goal > 0.0) || !(social_goal > 0.0)) throw std::invalid_argument("scenario: goals must be > 0");
    if (ego_path.points().size() < 2 || social_path.points().size() < 2)
        throw std::invalid_argument("scenario: paths are not set");
}

namespace {

// First ego arc length inside the conflict region, after checking that the
// region is a single contiguous interval.
std::pair<double, double> find_conflict(const ScenarioConfig& c) {
    constexpr double kStep = 0.25;
    std::optional<double> entry;
    std::optional<double> entry_social;
    bool inside = false;
    int regions = 0;
    const double end = c.ego_path.length();
    for (double s = 0.0; s <= end; s += kStep) {
        const auto [d, social_s] = c.social_path.project(c.ego_path.at(s));
        const bool now = d <= c.collision_radius;
        if (now && !inside) {
            ++regions;
            if (!entry) {
                entry = s;
                entry_social = social_s;
            }
        }
        inside = now;
    }
    if (regions != 1) throw std::invalid_argument("scenario: paths must meet in exactly one conflict region");
    return {*entry, *entry_social};
}

}  // namespace

Simulator::Simulator(ScenarioConfig config) : config_(std::move(config)) {
    config_.validate();
    std::tie(ego_conflict_s_, social_conflict_s_) = find_conflict(config_);
}

std::size_t Simulator::brake_action() const noexcept { return 0; }

std::size_t Simulator::max_accel_action() const noexcept { return config_.accel_set.size() - 1; }

WorldState Simulator::reset(std::span<const double> betas, std::uint64_t seed) const {
    if (betas.size() != static_cast<std::size_t>(config_.n_social))
        throw std::invalid_argument("reset: expected " + std::to_string(config_.n_social) + " β values, got " +
                                    std::to_string(betas.size()));
    Rng rng = make_rng(derive_seed(seed, "spawn"));
    WorldState st;
    st.vehicles.push_back(Vehicle{Role::Ego, 0.0, 0.0, 0.0, true});
    for (std::size_t i = 0; i < betas.size(); ++i) {
        const SpawnRange& r = config_.social_spawn[i % config_.social_spawn.size()];
        const double s = r.s_lo + (r.s_hi - r.s_lo) * uniform01(rng);
        const double v = r.v_lo + (r.v_hi - r.v_lo) * uniform01(rng);
        st.vehicles.push_back(Vehicle{Role::Social, s, v, betas[i], true});
    }
    return st;
}

Vec2 Simulator::position(const Vehicle& v) const {
    return v.role == Role::Ego ? config_.ego_path.at(v.s) : config_.social_path.at(v.s);
}

double Simulator::merge_coordinate(const Vehicle& v) const {
    return v.role == Role::Ego ? v.s - ego_conflict_s_ : v.s - social_conflict_s_;
}

double Simulator::merge_gap(const Vehicle& self, const Vehicle& other) const {
    return merge_coordinate(other) - merge_coordinate(self);
}

StepResult Simulator::step(const WorldState& state, std::size_t ego_action,
                           std::span<const std::size_t> social_actions) const {
    if (state.terminal()) throw InvariantError("step: episode already terminated");
    if (social_actions.size() + 1 != state.vehicles.size())
        throw std::invalid_argument("step: one action per social vehicle required");
    const auto& acc = config_.accel_set;
    if (ego_action >= acc.size()) throw std::invalid_argument("step: ego action out of range");

    StepResult out;
    out.state = state;
    out.state.step = state.step + 1;
    out.social_rewards.assign(social_actions.size(), 0.0);

    auto advance = [&](Vehicle& veh, std::size_t action) {
        veh.v = std::clamp(veh.v + acc[action] * config_.dt, 0.0, config_.v_max);
        veh.s += veh.v * config_.dt;
    };

    advance(out.state.vehicles[0], ego_action);
    const auto& sr = config_.social_reward;
    for (std::size_t i = 0; i < social_actions.size(); ++i) {
        Vehicle& veh = out.state.vehicles[i + 1];
        if (!veh.active) continue;
        if (social_actions[i] >= acc.size()) throw std::invalid_argument("step: social action out of range");
        advance(veh, social_actions[i]);
        const double x = veh.v / config_.v_max;
        double r_goal = sr.cruise_weight * (2.0 * sr.cruise_speed * x - x * x);
        if (veh.s >= config_.social_goal) {
            r_goal += sr.goal_bonus;
            veh.active = false;
        }
        const double r_speed = -x;
        out.social_rewards[i] = r_goal + veh.beta * r_speed;
    }

    const Vehicle& ego = out.state.vehicles[0];
    const Vec2 ego_pos = position(ego);
    bool collided = false;
    for (std::size_t i = 1; i < out.state.vehicles.size(); ++i) {
        const Vehicle& veh = out.state.vehicles[i];
        // A vehicle that reached its goal this step is still on the road for the check.
        if (!veh.active && state.vehicles[i].active == false) continue;
        if (distance(ego_pos, position(veh)) <= config_.collision_radius) {
            collided = true;
            break;
        }
    }

    constexpr double kGoalTolerance = 1e-9;
    out.ego_reward = config_.ego_reward.step;
    if (collided) {
        out.outcome = Outcome::Collision;
        out.ego_reward += config_.ego_reward.collision;
    } else if (ego.s >= config_.ego_goal - kGoalTolerance) {
        out.outcome = Outcome::Success;
        out.ego_reward += config_.ego_reward.success;
    } else if (out.state.step >= config_.max_steps) {
        out.outcome = Outcome::Timeout;
    }
    out.state.outcome = out.outcome;
    return out;
}

WorldState reset(const Simulator& sim, std::span<const double> betas, std::uint64_t seed) {
    return sim.reset(betas, seed);
}

StepResult step(const Simulator& sim, const WorldState& state, std::size_t ego_action,
                std::span<const std::size_t> social_actions) {
    return sim.step(state, ego_action, social_actions);
}

}  // namespace ismeta
