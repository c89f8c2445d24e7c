#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ismeta/policies.hpp"
#include "ismeta/simulator.hpp"

namespace ismeta {

/// Open-loop ego used for opponent modeling during social training and for
/// tests: plays `before_action` until a delay drawn uniformly from
/// [delay_lo, delay_hi] steps has elapsed, then `after_action`.
struct ScriptedEgo {
    std::size_t before_action = 0;
    std::size_t after_action = 0;
    int delay_lo = 0;
    int delay_hi = 0;
};

using EgoDriver = std::variant<const SoftmaxPolicy*, ScriptedEgo>;

struct StepRecord {
    WorldState state;  // state the actions were chosen in
    Observation ego_obs;
    std::vector<Observation> social_obs;
    std::size_t ego_action = 0;
    std::vector<std::size_t> social_actions;
    double ego_reward = 0.0;
    std::vector<double> social_rewards;
};

struct EpisodeRecord {
    std::uint64_t seed = 0;
    std::vector<double> betas;
    std::vector<StepRecord> steps;
    WorldState final_state;
    Outcome outcome = Outcome::Timeout;
    double ego_return = 0.0;  // Σ γᵗ R(s_t, a_t)
    int length = 0;
};

/// Runs one episode to termination. Fully determined by its arguments.
EpisodeRecord rollout(const Simulator& sim, const EgoDriver& ego, const SoftmaxPolicy& social,
                      std::span<const double> betas, std::uint64_t seed, double gamma);

EpisodeRecord rollout(const Simulator& sim, const SoftmaxPolicy& ego, const SoftmaxPolicy& social,
                      std::span<const double> betas, std::uint64_t seed, double gamma);

/// Header line with the episode summary followed by one line per step.
std::string episode_to_jsonl(const Simulator& sim, const EpisodeRecord& ep);

}  // namespace ismeta
