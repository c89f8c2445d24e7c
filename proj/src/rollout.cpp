#include "ismeta/rollout.hpp"

#include "json.hpp"

namespace ismeta {

EpisodeRecord rollout(const Simulator& sim, const EgoDriver& ego, const SoftmaxPolicy& social,
                      std::span<const double> betas, std::uint64_t seed, double gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("rollout: discount must be in [0, 1]");
    const std::size_t A = sim.action_count();
    if (social.action_count() != A) throw std::invalid_argument("rollout: social policy action count mismatch");
    const auto* ego_policy = std::get_if<const SoftmaxPolicy*>(&ego);
    if (ego_policy && (*ego_policy)->action_count() != A)
        throw std::invalid_argument("rollout: ego policy action count mismatch");
    const FeatureMap ego_map = ego_policy ? (*ego_policy)->features() : FeatureMap::ego(A);

    EpisodeRecord ep;
    ep.seed = seed;
    ep.betas.assign(betas.begin(), betas.end());
    Rng rng = make_rng(derive_seed(seed, "actions"));

    int scripted_delay = 0;
    if (const auto* s = std::get_if<ScriptedEgo>(&ego)) {
        if (s->before_action >= A || s->after_action >= A || s->delay_lo > s->delay_hi)
            throw std::invalid_argument("rollout: malformed scripted ego");
        scripted_delay = std::uniform_int_distribution<int>(s->delay_lo, s->delay_hi)(rng);
    }

    WorldState state = sim.reset(betas, seed);
    const std::size_t n_social = betas.size();
    double discount = 1.0;
    while (!state.terminal()) {
        StepRecord rec;
        rec.ego_obs = ego_map.observe(sim, state, 0);
        if (ego_policy) {
            rec.ego_action = (*ego_policy)->sample_action(rec.ego_obs, rng);
        } else {
            const auto& s = std::get<ScriptedEgo>(ego);
            rec.ego_action = state.step < scripted_delay ? s.before_action : s.after_action;
        }
        rec.social_obs.resize(n_social);
        rec.social_actions.resize(n_social, 0);
        for (std::size_t i = 0; i < n_social; ++i) {
            if (!state.vehicles[i + 1].active) continue;
            rec.social_obs[i] = social.features().observe(sim, state, i + 1);
            rec.social_actions[i] = social.sample_action(rec.social_obs[i], rng);
        }
        StepResult r = sim.step(state, rec.ego_action, rec.social_actions);
        rec.ego_reward = r.ego_reward;
        rec.social_rewards = std::move(r.social_rewards);
        ep.ego_return += discount * r.ego_reward;
        discount *= gamma;
        rec.state = std::move(state);
        ep.steps.push_back(std::move(rec));
        state = std::move(r.state);
    }
    ep.outcome = *state.outcome;
    ep.length = state.step;
    ep.final_state = std::move(state);
    return ep;
}

EpisodeRecord rollout(const Simulator& sim, const SoftmaxPolicy& ego, const SoftmaxPolicy& social,
                      std::span<const double> betas, std::uint64_t seed, double gamma) {
    return rollout(sim, EgoDriver{&ego}, social, betas, seed, gamma);
}

namespace {

nlohmann::json vehicles_json(const Simulator& sim, const WorldState& st) {
    auto arr = nlohmann::json::array();
    for (const auto& v : st.vehicles) {
        const Vec2 p = sim.position(v);
        nlohmann::json j{{"role", v.role == Role::Ego ? "ego" : "social"},
                         {"s", v.s},
                         {"v", v.v},
                         {"x", p.x},
                         {"y", p.y},
                         {"active", v.active}};
        if (v.role == Role::Social) j["beta"] = v.beta;
        arr.push_back(std::move(j));
    }
    return arr;
}

}  // namespace

std::string episode_to_jsonl(const Simulator& sim, const EpisodeRecord& ep) {
    std::string out;
    nlohmann::json header{{"type", "episode"},
                          {"seed", ep.seed},
                          {"betas", ep.betas},
                          {"outcome", std::string(outcome_name(ep.outcome))},
                          {"ego_return", ep.ego_return},
                          {"length", ep.length}};
    out += header.dump() + "\n";
    for (const auto& s : ep.steps) {
        nlohmann::json line{{"type", "step"},
                            {"step", s.state.step},
                            {"vehicles", vehicles_json(sim, s.state)},
                            {"ego_action", s.ego_action},
                            {"social_actions", s.social_actions},
                            {"ego_reward", s.ego_reward},
                            {"social_rewards", s.social_rewards}};
        out += line.dump() + "\n";
    }
    nlohmann::json last{{"type", "final"}, {"step", ep.final_state.step}, {"vehicles", vehicles_json(sim, ep.final_state)}};
    out += last.dump() + "\n";
    return out;
}

}  // namespace ismeta
