#pragma once

// REINFORCE trainers for the social baselines, the β-conditioned meta-policy
// and the ego policy (optionally importance weighted).
//
// All three share the same estimator: per step, coefficient
//   c_t = w · (G_t - b(s_t)) / batch
// times ∇θ ln π(a_t|s_t), where G_t is the discounted reward-to-go, b is a
// moving-average return per observation bin and w the episode's importance
// weight (1 unless the ego is trained with IS). Episodes of one update are
// generated in parallel; the parameter step happens after the whole batch.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ismeta/distributions.hpp"
#include "ismeta/policies.hpp"
#include "ismeta/rollout.hpp"
#include "ismeta/simulator.hpp"

namespace ismeta {

struct TrainConfig {
    int batch = 32;
    int updates = 100;
    double lr = 0.05;
    double gamma = 0.99;
    /// λ_reg: weight of the KL regularizer in meta training.
    double reg_weight = 1.0;
    int reg_batch = 256;
    /// Upper bound on training importance weights.
    double weight_cap = 20.0;
    std::uint64_t seed = 0;
    /// Draw one β per social vehicle instead of one per episode; the weight is
    /// then the product of per-vehicle ratios.
    bool per_vehicle_beta = false;
    /// Step size of the per-bin moving-average return baseline.
    double baseline_rate = 0.05;
    /// Coefficient of the potential-based progress shaping added to the ego
    /// training reward (0 disables it). Reported returns are never shaped.
    double shaping = 1.0;
    /// Meta training only: use this β for every update instead of sampling.
    std::optional<double> pinned_beta;
    /// Ego used while training social policies.
    ScriptedEgo opponent{0, 3, 0, 40};
    std::size_t jobs = 1;

    void validate() const;
};

struct ProgressRow {
    int update = 0;
    double mean_return = 0.0;
    double mean_weight = 1.0;
    double kl_to_baselines = 0.0;
    double success_rate = 0.0;
};

struct TrainResult {
    SoftmaxPolicy policy;
    std::vector<ProgressRow> progress;
};

/// CSV with header `update,mean_return,mean_weight,kl_to_baselines,success_rate`.
std::string progress_csv(std::span<const ProgressRow> rows);

TrainResult train_social(const Simulator& sim, double beta_bar, const TrainConfig& cfg);

TrainResult train_meta(const Simulator& sim, const BaselineSet& baselines, double beta_min, double beta_max,
                       const TrainConfig& cfg, const std::optional<SoftmaxPolicy>& init = std::nullopt);

TrainResult train_ego(const Simulator& sim, const SoftmaxPolicy& meta, const ScenarioDistribution& p_training,
                      const ScenarioDistribution& p_naturalistic, bool use_is, const TrainConfig& cfg,
                      const std::optional<SoftmaxPolicy>& init = std::nullopt);

// ---------------------------------------------------------------------------
// Building blocks, exposed for gradient checks.

/// One frozen term of the batch surrogate Σ coeff · ln π(action | obs).
struct ScoreTerm {
    Observation obs;
    std::size_t action = 0;
    double coeff = 0.0;
};

std::vector<double> batch_gradient(const SoftmaxPolicy& policy, std::span<const ScoreTerm> terms);
double batch_surrogate(const SoftmaxPolicy& policy, std::span<const ScoreTerm> terms);

/// Moving-average return per (observation bin, bucket).
class ReturnBaseline {
public:
    ReturnBaseline(std::size_t bins, std::size_t buckets, double rate);
    double value(std::size_t bin, std::size_t bucket = 0) const;
    void update(std::size_t bin, std::size_t bucket, double ret);

private:
    std::size_t buckets_;
    double rate_;
    std::vector<double> value_;
    std::vector<unsigned char> seen_;
};

/// Discounted reward-to-go: G_t = r_t + γ G_{t+1}.
std::vector<double> rewards_to_go(std::span<const double> rewards, double gamma);

/// Ego per-step training rewards: R_t plus shaping · (γ Φ(s_{t+1}) - Φ(s_t))
/// with Φ = progress / goal, clamped to [0, 1].
std::vector<double> shaped_ego_rewards(const Simulator& sim, const EpisodeRecord& ep, double gamma, double shaping);

/// Gradient of Σ_s Σ_{β̄ near β} KL(π*_β̄ ‖ π_meta(·|s, β)) descent direction,
/// preconditioned per parameter by max(1, Σ_s φ_i). Returns the mean KL.
double regularization_direction(const SoftmaxPolicy& meta, const BaselineSet& baselines, double beta,
                                std::span<const Observation> states, std::span<double> direction);

}  // namespace ismeta
