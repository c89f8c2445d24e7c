#include "ismeta/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ismeta/io.hpp"
#include "ismeta/kernels.hpp"
#include "ismeta/parallel.hpp"

namespace ismeta {

void TrainConfig::validate() const {
    if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    if (updates < 0) throw std::invalid_argument("train: updates must be >= 0");
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("train: gamma must be in (0, 1]");
    if (!(reg_weight >= 0.0)) throw std::invalid_argument("train: reg_weight must be >= 0");
    if (reg_batch < 1) throw std::invalid_argument("train: reg_batch must be >= 1");
    if (!(weight_cap >= 1.0)) throw std::invalid_argument("train: weight_cap must be >= 1");
    if (!(baseline_rate > 0.0 && baseline_rate <= 1.0)) throw std::invalid_argument("train: baseline_rate must be in (0, 1]");
    if (!(shaping >= 0.0)) throw std::invalid_argument("train: shaping must be >= 0");
}

std::string progress_csv(std::span<const ProgressRow> rows) {
    std::string out = "update,mean_return,mean_weight,kl_to_baselines,success_rate\n";
    for (const auto& r : rows)
        out += csv_row({std::to_string(r.update), format_double(r.mean_return), format_double(r.mean_weight),
                        format_double(r.kl_to_baselines), format_double(r.success_rate)});
    return out;
}

// ---------------------------------------------------------------------------

std::vector<double> batch_gradient(const SoftmaxPolicy& policy, std::span<const ScoreTerm> terms) {
    std::vector<double> g(policy.theta().size(), 0.0);
    for (const auto& t : terms) accumulate_score(policy, t.obs, t.action, t.coeff, g);
    return g;
}

double batch_surrogate(const SoftmaxPolicy& policy, std::span<const ScoreTerm> terms) {
    std::vector<double> lp(policy.action_count());
    double total = 0.0;
    for (const auto& t : terms) {
        policy.log_probs(t.obs, lp);
        total += t.coeff * lp[t.action];
    }
    return total;
}

ReturnBaseline::ReturnBaseline(std::size_t bins, std::size_t buckets, double rate)
    : buckets_(buckets), rate_(rate), value_(bins * buckets, 0.0), seen_(bins * buckets, 0) {}

double ReturnBaseline::value(std::size_t bin, std::size_t bucket) const { return value_[bin * buckets_ + bucket]; }

void ReturnBaseline::update(std::size_t bin, std::size_t bucket, double ret) {
    const std::size_t i = bin * buckets_ + bucket;
    if (!seen_[i]) {
        value_[i] = ret;
        seen_[i] = 1;
    } else {
        value_[i] += rate_ * (ret - value_[i]);
    }
}

std::vector<double> rewards_to_go(std::span<const double> rewards, double gamma) {
    std::vector<double> g(rewards.size());
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        acc = rewards[i] + gamma * acc;
        g[i] = acc;
    }
    return g;
}

std::vector<double> shaped_ego_rewards(const Simulator& sim, const EpisodeRecord& ep, double gamma, double shaping) {
    const double goal = sim.config().ego_goal;
    auto potential = [&](const WorldState& st) { return std::clamp(st.vehicles.front().s / goal, 0.0, 1.0); };
    std::vector<double> r(ep.steps.size());
    for (std::size_t t = 0; t < ep.steps.size(); ++t) {
        const WorldState& next = t + 1 < ep.steps.size() ? ep.steps[t + 1].state : ep.final_state;
        r[t] = ep.steps[t].ego_reward + shaping * (gamma * potential(next) - potential(ep.steps[t].state));
    }
    return r;
}

double regularization_direction(const SoftmaxPolicy& meta, const BaselineSet& baselines, double beta,
                                std::span<const Observation> states, std::span<double> direction) {
    std::fill(direction.begin(), direction.end(), 0.0);
    const auto near = nearest_baselines(beta, baselines);
    if (near.empty() || states.empty()) return 0.0;
    const auto& map = meta.features();
    const std::size_t A = map.action_count();
    std::vector<double> mass(direction.size(), 0.0);
    std::vector<SparseFeatures> feats(A);
    std::vector<double> pi(A), target(A), lp(A), lq(A);
    double kl_total = 0.0;
    for (Observation s : states) {
        s.beta = beta;
        map.encode(s, feats);
        meta.probs(s, pi);
        meta.log_probs(s, lq);
        for (std::size_t b : near) {
            const SoftmaxPolicy& base = baselines.policies[b];
            base.probs(s, target);
            base.log_probs(s, lp);
            for (std::size_t a = 0; a < A; ++a) {
                kl_total += target[a] * (lp[a] - lq[a]);
                const double diff = target[a] - pi[a];
                for (std::uint8_t k = 0; k < feats[a].size; ++k) {
                    direction[feats[a].index[k]] += diff * feats[a].value[k];
                    mass[feats[a].index[k]] += feats[a].value[k];
                }
            }
        }
    }
    for (std::size_t i = 0; i < direction.size(); ++i) direction[i] /= std::max(1.0, mass[i]);
    return kl_total / static_cast<double>(states.size());
}

// ---------------------------------------------------------------------------

namespace {

std::size_t nearest_center(double beta, const std::vector<double>& centers) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < centers.size(); ++j)
        if (std::abs(centers[j] - beta) < std::abs(centers[best] - beta)) best = j;
    return best;
}

struct SocialBatch {
    std::vector<ScoreTerm> terms;
    std::vector<Observation> visited;
    double mean_return = 0.0;
};

// Policy-gradient terms for every active social vehicle of every episode.
// Baseline lookups use the table as it was before this batch; updates are
// applied afterwards in episode order.
SocialBatch social_terms(const std::vector<EpisodeRecord>& episodes, ReturnBaseline& baseline,
                         const std::vector<double>& centers, double gamma) {
    SocialBatch out;
    const double inv_batch = 1.0 / static_cast<double>(episodes.size());
    struct Pending {
        std::size_t bin;
        std::size_t bucket;
        double ret;
    };
    std::vector<Pending> pending;
    double return_sum = 0.0;
    std::size_t return_count = 0;
    for (const auto& ep : episodes) {
        const std::size_t n_social = ep.betas.size();
        for (std::size_t i = 0; i < n_social; ++i) {
            std::vector<double> rewards;
            std::vector<const StepRecord*> steps;
            for (const auto& s : ep.steps) {
                if (!s.state.vehicles[i + 1].active) break;
                rewards.push_back(s.social_rewards[i]);
                steps.push_back(&s);
            }
            if (steps.empty()) continue;
            const auto g = rewards_to_go(rewards, gamma);
            return_sum += g.front();
            ++return_count;
            for (std::size_t t = 0; t < steps.size(); ++t) {
                const Observation& obs = steps[t]->social_obs[i];
                const std::size_t bucket = centers.empty() ? 0 : nearest_center(obs.beta, centers);
                const double adv = g[t] - baseline.value(obs.state, bucket);
                out.terms.push_back({obs, steps[t]->social_actions[i], adv * inv_batch});
                out.visited.push_back(obs);
                pending.push_back({obs.state, bucket, g[t]});
            }
        }
    }
    for (const auto& p : pending) baseline.update(p.bin, p.bucket, p.ret);
    out.mean_return = return_count ? return_sum / static_cast<double>(return_count) : 0.0;
    return out;
}

void apply_gradient(SoftmaxPolicy& policy, std::span<const ScoreTerm> terms, double lr) {
    const auto g = batch_gradient(policy, terms);
    kernels::axpy(lr, g, policy.mutable_theta());
}

double success_fraction(const std::vector<EpisodeRecord>& episodes) {
    const auto n = std::count_if(episodes.begin(), episodes.end(),
                                 [](const EpisodeRecord& e) { return e.outcome == Outcome::Success; });
    return static_cast<double>(n) / static_cast<double>(episodes.size());
}

}  // namespace

TrainResult train_social(const Simulator& sim, double beta_bar, const TrainConfig& cfg) {
    cfg.validate();
    SoftmaxPolicy policy(FeatureMap::social(sim.action_count()));
    ReturnBaseline baseline(policy.features().state_count(), 1, cfg.baseline_rate);
    const std::vector<double> betas(static_cast<std::size_t>(sim.config().n_social), beta_bar);
    const EgoDriver ego{cfg.opponent};
    TrainResult result{policy, {}};
    std::vector<EpisodeRecord> episodes(static_cast<std::size_t>(cfg.batch));

    for (int u = 0; u < cfg.updates; ++u) {
        parallel_for(episodes.size(), cfg.jobs, [&](std::size_t e) {
            const auto idx = static_cast<std::uint64_t>(u) * episodes.size() + e;
            episodes[e] = rollout(sim, ego, result.policy, betas, derive_seed(cfg.seed, "episode", idx), cfg.gamma);
        });
        const auto batch = social_terms(episodes, baseline, {}, cfg.gamma);
        apply_gradient(result.policy, batch.terms, cfg.lr);
        result.progress.push_back({u, batch.mean_return, 1.0, 0.0, success_fraction(episodes)});
    }
    return result;
}

TrainResult train_meta(const Simulator& sim, const BaselineSet& baselines, double beta_min, double beta_max,
                       const TrainConfig& cfg, const std::optional<SoftmaxPolicy>& init) {
    cfg.validate();
    baselines.validate();
    if (!(beta_min < beta_max)) throw std::invalid_argument("train_meta: require beta_min < beta_max");
    SoftmaxPolicy policy = init ? *init : SoftmaxPolicy(FeatureMap::meta(baselines.betas, baselines.radius, sim.action_count()));
    if (policy.features().kind() != FeatureKind::Meta) throw std::invalid_argument("train_meta: init is not a meta policy");
    for (const auto& b : baselines.policies)
        if (b.features().state_count() != policy.features().state_count())
            throw std::invalid_argument("train_meta: baseline and meta features index states differently");

    const auto& centers = policy.features().layout().rbf_centers;
    ReturnBaseline baseline(policy.features().state_count(), centers.size(), cfg.baseline_rate);
    const EgoDriver ego{cfg.opponent};
    const std::size_t n_social = static_cast<std::size_t>(sim.config().n_social);
    const double reg_mix = cfg.lr * cfg.reg_weight;
    TrainResult result{policy, {}};
    std::vector<EpisodeRecord> episodes(static_cast<std::size_t>(cfg.batch));
    std::vector<double> direction(policy.theta().size());

    for (int u = 0; u < cfg.updates; ++u) {
        Rng rng = make_rng(derive_seed(cfg.seed, "update", static_cast<std::uint64_t>(u)));
        const double beta = cfg.pinned_beta ? *cfg.pinned_beta : std::uniform_real_distribution<double>(beta_min, beta_max)(rng);
        const std::vector<double> betas(n_social, beta);
        parallel_for(episodes.size(), cfg.jobs, [&](std::size_t e) {
            const auto idx = static_cast<std::uint64_t>(u) * episodes.size() + e;
            episodes[e] = rollout(sim, ego, result.policy, betas, derive_seed(cfg.seed, "episode", idx), cfg.gamma);
        });
        const auto batch = social_terms(episodes, baseline, centers, cfg.gamma);

        // Replay batch drawn from this update's visitation under the meta-policy.
        std::vector<Observation> replay;
        if (!batch.visited.empty()) {
            std::uniform_int_distribution<std::size_t> pick(0, batch.visited.size() - 1);
            replay.reserve(static_cast<std::size_t>(cfg.reg_batch));
            for (int i = 0; i < cfg.reg_batch; ++i) replay.push_back(batch.visited[pick(rng)]);
        }
        const double kl = cfg.reg_weight > 0.0
                              ? regularization_direction(result.policy, baselines, beta, replay, direction)
                              : (std::fill(direction.begin(), direction.end(), 0.0), 0.0);

        // Baseline in reach: θ += (lr·g + lr·λ·d) / (1 + lr·λ). Otherwise θ += lr·g.
        const bool regularized = cfg.reg_weight > 0.0 && !nearest_baselines(beta, baselines).empty();
        const double share = regularized ? reg_mix / (1.0 + reg_mix) : 0.0;
        apply_gradient(result.policy, batch.terms, cfg.lr * (1.0 - share));
        if (regularized) kernels::axpy(share, direction, result.policy.mutable_theta());
        result.progress.push_back({u, batch.mean_return, 1.0, kl, success_fraction(episodes)});
    }
    return result;
}

TrainResult train_ego(const Simulator& sim, const SoftmaxPolicy& meta, const ScenarioDistribution& p_training,
                      const ScenarioDistribution& p_naturalistic, bool use_is, const TrainConfig& cfg,
                      const std::optional<SoftmaxPolicy>& init) {
    cfg.validate();
    SoftmaxPolicy policy = init ? *init : SoftmaxPolicy(FeatureMap::ego(sim.action_count()));
    if (policy.features().kind() != FeatureKind::Ego) throw std::invalid_argument("train_ego: init is not an ego policy");
    ReturnBaseline baseline(policy.features().state_count(), 1, cfg.baseline_rate);
    const std::size_t n_social = static_cast<std::size_t>(sim.config().n_social);
    const std::size_t B = static_cast<std::size_t>(cfg.batch);
    TrainResult result{policy, {}};
    std::vector<EpisodeRecord> episodes(B);
    std::vector<double> weights(B);

    for (int u = 0; u < cfg.updates; ++u) {
        parallel_for(B, cfg.jobs, [&](std::size_t e) {
            const auto idx = static_cast<std::uint64_t>(u) * B + e;
            Rng beta_rng = make_rng(derive_seed(cfg.seed, "beta", idx));
            std::vector<double> betas(n_social);
            double w = 1.0;
            if (cfg.per_vehicle_beta) {
                for (auto& b : betas) b = p_training.sample(beta_rng);
                if (use_is) {
                    for (double b : betas) w *= likelihood_ratio(p_naturalistic, p_training, b);
                    w = std::min(w, cfg.weight_cap);
                }
            } else {
                const double b = p_training.sample(beta_rng);
                std::fill(betas.begin(), betas.end(), b);
                if (use_is) w = likelihood_ratio(p_naturalistic, p_training, b, cfg.weight_cap);
            }
            weights[e] = w;
            episodes[e] = rollout(sim, result.policy, meta, betas, derive_seed(cfg.seed, "episode", idx), cfg.gamma);
        });

        std::vector<ScoreTerm> terms;
        struct Pending {
            std::size_t bin;
            double ret;
        };
        std::vector<Pending> pending;
        double return_sum = 0.0;
        double weight_sum = 0.0;
        for (std::size_t e = 0; e < B; ++e) {
            const auto& ep = episodes[e];
            const auto g = rewards_to_go(shaped_ego_rewards(sim, ep, cfg.gamma, cfg.shaping), cfg.gamma);
            for (std::size_t t = 0; t < ep.steps.size(); ++t) {
                const Observation& obs = ep.steps[t].ego_obs;
                const double adv = g[t] - baseline.value(obs.state);
                terms.push_back({obs, ep.steps[t].ego_action, weights[e] * adv / static_cast<double>(B)});
                pending.push_back({obs.state, g[t]});
            }
            return_sum += ep.ego_return;
            weight_sum += weights[e];
        }
        for (const auto& p : pending) baseline.update(p.bin, 0, p.ret);
        apply_gradient(result.policy, terms, cfg.lr);
        result.progress.push_back({u, return_sum / static_cast<double>(B), weight_sum / static_cast<double>(B), 0.0,
                                   success_fraction(episodes)});
    }
    return result;
}

}  // namespace ismeta
